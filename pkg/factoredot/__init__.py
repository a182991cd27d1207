from factoredot.core.estimator import estimate, induce_factored_coupling, w_hat
from factoredot.core.factored.solver import factored_ot
from factoredot.core.measures import DiscreteMeasure, LabeledDataset, TransportPlan

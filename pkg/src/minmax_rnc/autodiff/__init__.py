"""Selected (minimum-norm) derivatives through MinMax cascades."""
from .losses import LOSS_KINDS, masked_mean_loss, position_losses, predictions
from .rules import active_set, grad_max, grad_min
from .tape import GradResult, Tape, TapeNode, backward, build_loss_tape, build_tape, node_count
from .vectorized import cascade_backward, loss_and_grad, tie_stats
from .bounds import GradientBound, measure_bound
from .gradcheck import FDReport, finite_diff_check

from gdfq.autodiff import Tensor, backward, finite_diff_check, no_grad

__version__ = "0.1.0"
__all__ = ["Tensor", "backward", "finite_diff_check", "no_grad"]

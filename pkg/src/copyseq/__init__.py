"""Copy-augmented sequence-to-sequence models on a small numpy autodiff core."""
from copyseq.kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
__version__ = "0.1.0"

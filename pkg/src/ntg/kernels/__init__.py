"""Hot numeric kernels, dispatched by backend (see ntg.backend).

All kernels take and return C-contiguous float64 arrays. The two backends
agree to float tolerance; each is individually deterministic at any thread
count.
"""

from ..backend import ACTIVE

if ACTIVE == "numba":
    from . import _numba as _impl
else:
    from . import _numpy as _impl

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_kernel = _impl.conv2d_backward_kernel
avgpool2_forward = _impl.avgpool2_forward
avgpool2_backward = _impl.avgpool2_backward
upsample2_forward = _impl.upsample2_forward
upsample2_backward = _impl.upsample2_backward
match_argmax = _impl.match_argmax
accumulate_patches = _impl.accumulate_patches


def warmup():
    """Force-compile every kernel on tiny inputs (no-op on the numpy path)."""
    import numpy as np

    x = np.ones((2, 5, 4))
    w = np.ones((3, 2, 3, 3))
    b = np.zeros(3)
    out = conv2d_forward(x, w, b, 1, 1)
    conv2d_backward_input(out, w, 1, 1, 5, 4)
    conv2d_backward_kernel(out, x, 1, 1, 3, 3)
    conv2d_forward(x, w, b, 2, 1)
    avgpool2_backward(avgpool2_forward(x), 5, 4)
    upsample2_backward(upsample2_forward(x))
    qn = np.ones((4, 2 * 3 * 3))
    idx, best = match_argmax(x, qn, 3)
    accumulate_patches(idx, best, qn, 2, 3)

"""Axial hypercomplex convolutional networks on a small numpy autodiff core."""

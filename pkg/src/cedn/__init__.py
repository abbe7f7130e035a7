"""Object contour detection with a fully convolutional encoder-decoder network, at desk scale."""

__version__ = "0.1.0"

"""Semi-adversarial convolutional autoencoder for gender privacy in face images."""
__version__ = "0.1.0"

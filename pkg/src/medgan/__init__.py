"""Motion-artifact correction with a cascaded U-net GAN, written against plain numpy."""

__version__ = "0.1.0"

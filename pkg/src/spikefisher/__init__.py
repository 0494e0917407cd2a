"""Testing the number of spikes in high-dimensional generalized spiked Fisher matrices."""

__version__ = "0.1.0"

"""One-to-one voice conversion on mel-cepstral features.

The package trains a pair of dense-residual generators against patch
discriminators with an adaptive L1/L2 adversarial objective, adjusts the
learning rates of both sides each epoch from the loss movement, and ships
the feature tooling (synthetic corpora, archives, F0 transport, MCD
evaluation) needed to run the whole loop on a desk machine.

Everything runs on a small reverse-mode autodiff engine over numpy arrays;
there is no framework dependency.
"""

__version__ = "0.1.0"

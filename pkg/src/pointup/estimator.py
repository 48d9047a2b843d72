"""Scikit-learn style front door.

``PointCloudUpsampler.fit(X)`` self-trains on the single cloud ``X`` and
``transform(X)`` (or ``predict``) upsamples a cloud with the trained
generator. The usual estimator conventions apply: constructor arguments
are stored verbatim, fitted state lives in trailing-underscore
attributes, and ``get_params``/``set_params`` come from BaseEstimator so
the class composes with pipelines and ``clone``.
"""

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .geometry import AugmentParams
from .losses import LossWeights
from .training import TrainConfig, self_train, upsample
from .validation import check_points


class PointCloudUpsampler(BaseEstimator, TransformerMixin):
    """Upsamples a point cloud by training on that cloud alone.

    Parameters mirror TrainConfig; see that class for semantics. ``X`` is
    any (N, 3) array-like of finite coordinates.
    """

    def __init__(self, ratio=4, epochs=50, num_pairs=12, batch_size=12,
                 kernel="random", lr_generator=0.001, lr_discriminator=0.0001,
                 use_discriminator=True, use_self_attention=True,
                 progressive=True, use_uniform_loss=True,
                 use_repulsion_loss=True, reconstruction="emd", neighbors=8,
                 channels=32, weights=None, augment=None, seed=0):
        self.ratio = ratio
        self.epochs = epochs
        self.num_pairs = num_pairs
        self.batch_size = batch_size
        self.kernel = kernel
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.use_discriminator = use_discriminator
        self.use_self_attention = use_self_attention
        self.progressive = progressive
        self.use_uniform_loss = use_uniform_loss
        self.use_repulsion_loss = use_repulsion_loss
        self.reconstruction = reconstruction
        self.neighbors = neighbors
        self.channels = channels
        self.weights = weights
        self.augment = augment
        self.seed = seed

    def _config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=min(self.batch_size, self.num_pairs),
            lr_generator=self.lr_generator,
            lr_discriminator=self.lr_discriminator,
            num_pairs=self.num_pairs,
            ratio=self.ratio,
            kernel=self.kernel,
            weights=self.weights if self.weights is not None else LossWeights(),
            use_discriminator=self.use_discriminator,
            use_self_attention=self.use_self_attention,
            progressive=self.progressive,
            use_uniform_loss=self.use_uniform_loss,
            use_repulsion_loss=self.use_repulsion_loss,
            reconstruction=self.reconstruction,
            seed=self.seed,
            neighbors=self.neighbors,
            channels=self.channels,
            augment=self.augment if self.augment is not None else AugmentParams(),
        )

    def fit(self, X, y=None):
        pts = check_points(X, "X")
        result = self_train(pts, self._config())
        self.generator_params_ = result.generator
        self.discriminator_params_ = result.discriminator
        self.train_log_ = result.log
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        if not hasattr(self, "generator_params_"):
            raise NotFittedError(
                "This PointCloudUpsampler instance is not fitted yet; call fit first.")
        pts = check_points(X, "X")
        return upsample(pts, self.generator_params_).points.copy()

    def predict(self, X):
        return self.transform(X)

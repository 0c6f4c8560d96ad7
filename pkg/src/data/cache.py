import threading

import numpy as np

from data.models import NormalizedTexture, Segmentation


class Cache:
    """In-memory cache for per-image pipeline products.

    Keys start with the resolved image path so two manifests that reuse an
    image_id never collide; the rest of the key is the configuration that
    produced the value. An experiment run that falls back to the global
    instance clears it when it finishes.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._segmentation_cache: dict[tuple, Segmentation] = {}
        self._texture_cache: dict[tuple, NormalizedTexture] = {}
        self._feature_cache: dict[tuple, np.ndarray] = {}

    def get_segmentation(self, key: tuple) -> Segmentation | None:
        """Get a cached segmentation if available."""
        with self._lock:
            return self._segmentation_cache.get(key)

    def set_segmentation(self, key: tuple, seg: Segmentation):
        with self._lock:
            self._segmentation_cache[key] = seg

    def get_texture(self, key: tuple) -> NormalizedTexture | None:
        """Get a cached normalized texture if available."""
        with self._lock:
            return self._texture_cache.get(key)

    def set_texture(self, key: tuple, tex: NormalizedTexture):
        with self._lock:
            self._texture_cache[key] = tex

    def get_features(self, key: tuple) -> np.ndarray | None:
        """Get a cached stripe feature matrix if available."""
        with self._lock:
            return self._feature_cache.get(key)

    def set_features(self, key: tuple, features: np.ndarray):
        features = np.array(features, copy=True)
        features.setflags(write=False)
        with self._lock:
            self._feature_cache[key] = features

    def clear(self):
        with self._lock:
            self._segmentation_cache.clear()
            self._texture_cache.clear()
            self._feature_cache.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._segmentation_cache) + len(self._texture_cache) + len(self._feature_cache)


# Global cache instance
_cache = Cache()


def get_cache() -> Cache:
    """Get the global cache instance."""
    return _cache

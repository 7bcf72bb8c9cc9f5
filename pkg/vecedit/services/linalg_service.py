"""
Linalg Service - dense float64 helpers shared by the model, steering and editing code
"""

import numpy as np

from vecedit.exceptions import DegenerateSampleError, ShapeError

# Vectors are 1-D and matrices 2-D float64 ndarrays.
Vector = np.ndarray
Matrix = np.ndarray


class LinalgService:
    """Service for small dense linear-algebra operations."""

    @classmethod
    def as_vector(cls, data, name: str = 'vector') -> Vector:
        """
        Coerce data to a finite, non-empty float64 vector.

        Args:
            data: Sequence or array of numbers
            name: Label used in error messages

        Returns:
            1-D float64 ndarray
        """
        vec = np.asarray(data, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise ShapeError(f"{name} must be a non-empty 1-D array, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ShapeError(f"{name} contains non-finite entries")
        return vec

    @classmethod
    def as_matrix(cls, data, name: str = 'matrix') -> Matrix:
        """
        Coerce data to a finite, non-empty float64 matrix.

        Args:
            data: Nested sequence or array of numbers
            name: Label used in error messages

        Returns:
            2-D float64 ndarray
        """
        mat = np.asarray(data, dtype=np.float64)
        if mat.ndim != 2 or mat.size == 0:
            raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ShapeError(f"{name} contains non-finite entries")
        return mat

    @classmethod
    def matvec(cls, m: Matrix, x: Vector) -> Vector:
        """
        Matrix-vector product.

        Args:
            m: Matrix of shape (rows, cols)
            x: Vector of length cols

        Returns:
            Vector of length rows
        """
        m = np.asarray(m, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
            raise ShapeError(f"matvec shape mismatch: matrix {m.shape} vs vector {x.shape}")
        return m @ x

    @classmethod
    def outer(cls, u: Vector, k: Vector, scale: float = 1.0) -> Matrix:
        """
        Scaled outer product scale * u k^T (rank at most one).

        Args:
            u: Output-side vector
            k: Input-side vector
            scale: Scalar multiplier

        Returns:
            Matrix of shape (len(u), len(k))
        """
        return float(scale) * np.outer(np.asarray(u, dtype=np.float64),
                                       np.asarray(k, dtype=np.float64))

    @classmethod
    def cosine(cls, a: Vector, b: Vector) -> float:
        """
        Cosine similarity, 0 when either vector has zero norm.

        Args:
            a: First vector
            b: Second vector

        Returns:
            Cosine in [-1, 1]
        """
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f"cosine shape mismatch: {a.shape} vs {b.shape}")
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))

    @classmethod
    def pearson(cls, x, y) -> float:
        """
        Sample Pearson correlation.

        Args:
            x: Sample values
            y: Paired sample values

        Returns:
            Correlation in [-1, 1]
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape:
            raise ShapeError(f"pearson needs equal-length 1-D samples, got {x.shape} and {y.shape}")
        if x.size < 2:
            raise DegenerateSampleError("degenerate sample: need at least 2 points")
        if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
            raise DegenerateSampleError()
        xc = x - x.mean()
        yc = y - y.mean()
        sxx = np.dot(xc, xc)
        syy = np.dot(yc, yc)
        if sxx == 0.0 or syy == 0.0:
            raise DegenerateSampleError()
        return float(np.clip(np.dot(xc, yc) / np.sqrt(sxx * syy), -1.0, 1.0))

    @classmethod
    def rms_norm(cls, x: np.ndarray, gain: Vector, eps: float) -> np.ndarray:
        """
        RMS normalization with learned gain, applied along the last axis.

        Args:
            x: Vector, or array whose last axis is the feature axis
            gain: Per-feature gain
            eps: Variance regularizer (>= 0)

        Returns:
            Normalized array with the shape of x
        """
        x = np.asarray(x, dtype=np.float64)
        gain = np.asarray(gain, dtype=np.float64)
        if x.shape[-1] != gain.shape[-1]:
            raise ShapeError(f"rms_norm shape mismatch: input {x.shape} vs gain {gain.shape}")
        rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
        safe = np.where(rms == 0.0, 1.0, rms)
        return np.where(rms == 0.0, 0.0, x / safe) * gain

    @classmethod
    def layer_norm(cls, x: np.ndarray, gain: Vector, eps: float) -> np.ndarray:
        """Mean-centred layer normalization with gain and no bias."""
        x = np.asarray(x, dtype=np.float64)
        gain = np.asarray(gain, dtype=np.float64)
        if x.shape[-1] != gain.shape[-1]:
            raise ShapeError(f"layer_norm shape mismatch: input {x.shape} vs gain {gain.shape}")
        centred = x - np.mean(x, axis=-1, keepdims=True)
        std = np.sqrt(np.mean(centred * centred, axis=-1, keepdims=True) + eps)
        safe = np.where(std == 0.0, 1.0, std)
        return np.where(std == 0.0, 0.0, centred / safe) * gain

    @classmethod
    def unit(cls, x: Vector) -> Vector:
        """Return x / ||x||, or x unchanged when its norm is zero."""
        x = np.asarray(x, dtype=np.float64)
        n = np.linalg.norm(x)
        return x / n if n > 0.0 else x

import numpy as np
from exceptions import InvalidInputError, ShapeMismatchError
from fem.fields import SparseOperator
from msreduction.cem import MultiscaleBasis
from msreduction.projection import reconstruct


def relative_l2(pred: np.ndarray, target: np.ndarray) -> float:
    """||target - pred||_2 / ||target||_2."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} and target {target.shape} differ")
    norm = np.linalg.norm(target)
    if norm == 0.0:
        raise InvalidInputError("relative error of a zero target is undefined")
    return float(np.linalg.norm(target - pred) / norm)


def relative_l2_rows(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Row-wise relative errors; rows with a zero target come back as NaN."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} and target {target.shape} differ")
    norms = np.linalg.norm(target, axis=1)
    errors = np.full(norms.shape, np.nan)
    valid = norms > 0
    errors[valid] = np.linalg.norm(target[valid] - pred[valid], axis=1) / norms[valid]
    return errors


def mean_relative_l2(pred: np.ndarray, target: np.ndarray) -> float:
    errors = relative_l2_rows(pred, target)
    if np.all(np.isnan(errors)):
        raise InvalidInputError("every target row has zero norm")
    return float(np.nanmean(errors))


def mass_norm(mass: SparseOperator, values: np.ndarray) -> np.ndarray:
    """sqrt(v^T M v) for a vector or for every row of a batch."""
    values = np.atleast_2d(values)
    return np.sqrt(np.einsum("ij,ij->i", values, (mass.matrix @ values.T).T))


def fine_relative_L2(
    pred_coarse: np.ndarray, u_h: np.ndarray, basis: MultiscaleBasis, mass: SparseOperator
) -> np.ndarray | float:
    """||R pred - u_h||_M / ||u_h||_M; batches of rows give one error per row."""
    single = np.ndim(u_h) == 1
    u_h = np.atleast_2d(np.asarray(u_h, dtype=np.float64))
    error = reconstruct(np.atleast_2d(pred_coarse), basis) - u_h
    denominator = mass_norm(mass, u_h)
    if np.any(denominator == 0.0):
        raise InvalidInputError("fine solution with zero L2 norm")
    result = mass_norm(mass, error) / denominator
    return float(result[0]) if single else result

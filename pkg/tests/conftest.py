import numpy as np

from molmark import autodiff as ad


def finite_difference_grad(fn, x0: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar-valued fn over every entry of x0."""
    num = np.zeros_like(x0, dtype=np.float64)
    it = np.nditer(x0, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        num[idx] = (fn(ad.Tensor(xp)).item() - fn(ad.Tensor(xm)).item()) / (2 * h)
    return num


def gradcheck(fn, x0: np.ndarray, h: float = 1e-6, tol: float = 1e-4) -> float:
    """Max relative error between backward() and central differences."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = ad.Tensor(x0.copy(), requires_grad=True)
    fn(t).backward()
    analytic = t.grad if t.grad is not None else np.zeros_like(x0)
    numeric = finite_difference_grad(fn, x0, h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    rel = (np.abs(analytic - numeric) / denom).max()
    assert rel <= tol, f"gradient mismatch: rel err {rel}"
    return rel

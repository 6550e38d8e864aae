"""Hand-built unwrap results for unit tests."""
import numpy as np

from relu_unwrap.unwrapper import ActivationPattern, LocalLinearModel, RegionRecord, UnwrapResult


def fake_result(coefs, intercepts, counts, singles=None, X=None):
    """UnwrapResult with hand-set LLMs; instances are laid out region by region."""
    coefs = np.asarray(coefs, dtype=float)
    d = coefs.shape[1]
    n = int(sum(counts))
    X = np.zeros((n, d)) if X is None else X
    regions, start = [], 0
    inst = np.empty(n, dtype=np.int64)
    for k, (w, b, c) in enumerate(zip(coefs, intercepts, counts)):
        idx = np.arange(start, start + c)
        inst[idx] = k
        start += c
        pat = ActivationPattern.from_bits([int(v) for v in np.binary_repr(k, 8)], (8,))
        regions.append(RegionRecord(k, pat, LocalLinearModel(w, float(b), pat), idx, 0.0, 0.0, 0.0, 0.0,
                                    X[idx].mean(axis=0) if c else np.zeros(d),
                                    bool(singles[k]) if singles is not None else False))
    return UnwrapResult(regions, "net", "data", "regression", "identity", [f"x{j + 1}" for j in range(d)], n,
                        1.0, inst)

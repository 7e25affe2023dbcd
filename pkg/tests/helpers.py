"""Shared independent references: finite differences and brute-force geometry."""

import numpy as np

from promptseg.autograd import Tensor
from promptseg.model import Prediction, PromptSet


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar-valued f at x (element by element)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_grad(op, shapes, rng, h: float = 1e-3, tol: float = 1e-3, positive: bool = False):
    """FD-check d(sum(op(xs)))/dx_i for every input; run under float64 mode."""
    xs = []
    for shape in shapes:
        arr = rng.standard_normal(shape)
        if positive:
            arr = np.abs(arr) + 0.5
        xs.append(arr)
    errs = []
    for i in range(len(xs)):
        def f(xi, i=i):
            args = [Tensor(xs[j]) if j != i else Tensor(xi) for j in range(len(xs))]
            return float(op(*args).data.sum())

        args = [Tensor(x, requires_grad=True) for x in xs]
        out = op(*args)
        out.sum().backward()
        fd = finite_diff_grad(f, xs[i], h=h)
        errs.append(rel_err(args[i].grad, fd))
    worst = max(errs)
    assert worst < tol, f"gradient mismatch: rel err {worst:.2e} >= {tol}"
    return worst


# -- geometry oracles --------------------------------------------------------


def brute_fps(points: np.ndarray, count: int, seed_index: int = 0) -> np.ndarray:
    """O(N * L) greedy reference, evaluating every candidate's min distance fresh."""
    n = points.shape[0]
    selected = [int(seed_index)]
    for _ in range(count - 1):
        best_i, best_d = None, -1.0
        for i in range(n):
            d = min(float(((points[i] - points[j]) ** 2).sum()) for j in selected)
            if d > best_d:
                best_d, best_i = d, i
        selected.append(best_i)
    return np.asarray(selected[:count], dtype=np.int64)


def brute_knn(points: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Full per-query sort by (distance, index)."""
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for qi, q in enumerate(queries):
        d = ((points - q) ** 2).sum(axis=1)
        order = sorted(range(points.shape[0]), key=lambda i: (d[i], i))
        out[qi] = order[:k]
    return out


def scalar_interp_3nn(queries, support, feats, eps=1e-8):
    out = np.zeros((queries.shape[0], feats.shape[1]), dtype=np.float64)
    for qi, q in enumerate(queries):
        d = np.sqrt(((support - q) ** 2).sum(axis=1))
        order = sorted(range(support.shape[0]), key=lambda i: (d[i], i))[:3]
        if d[order[0]] < eps:
            out[qi] = feats[order[0]]
            continue
        w = np.array([1.0 / (d[i] + eps) for i in order])
        w /= w.sum()
        out[qi] = sum(wi * feats[i] for wi, i in zip(w, order))
    return out


def brute_first_click(gt: np.ndarray, points: np.ndarray):
    fg = np.flatnonzero(gt)
    bg = np.flatnonzero(~gt)
    if fg.size == 0:
        raise ValueError("empty foreground")
    if bg.size == 0:
        centroid = points.mean(axis=0)
        d = ((points - centroid) ** 2).sum(axis=1)
        return int(min(range(points.shape[0]), key=lambda i: (d[i], i)))
    best_i, best_d = None, -1.0
    for i in fg:
        d = min(float(((points[i] - points[j]) ** 2).sum()) for j in bg)
        if d > best_d:
            best_d, best_i = d, int(i)
    return best_i


def brute_next_click(gt: np.ndarray, pred: np.ndarray, points: np.ndarray):
    """Returns (index, label) with label 1 = foreground. FN wins ties."""
    fp = np.flatnonzero(pred & ~gt)
    fn = np.flatnonzero(~pred & gt)

    def candidate(err_set):
        comp = np.setdiff1d(np.arange(points.shape[0]), err_set)
        best_i, best_d = None, -1.0
        for i in err_set:
            d = min(float(((points[i] - points[j]) ** 2).sum()) for j in comp)
            if d > best_d:
                best_d, best_i = d, int(i)
        return best_i, best_d

    fn_c = candidate(fn) if fn.size else (None, -1.0)
    fp_c = candidate(fp) if fp.size else (None, -1.0)
    if fn_c[0] is None and fp_c[0] is None:
        raise ValueError("converged")
    if fn_c[1] >= fp_c[1]:
        return fn_c[0], 1
    return fp_c[0], 0


def brute_mask_nms(masks, scores, thresh):
    order = sorted(range(len(masks)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        a = masks[i]
        ok = True
        for j in kept:
            b = masks[j]
            inter = np.logical_and(a, b).sum()
            union = np.logical_or(a, b).sum()
            iou = 1.0 if union == 0 else inter / union
            if iou > thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def random_cloud(rng, n, colors=False):
    from promptseg.geometry import PointCloud

    pts = rng.standard_normal((n, 3)).astype(np.float32)
    cols = rng.random((n, 3)).astype(np.float32) if colors else None
    return PointCloud(points=pts, colors=cols)


class PartEchoModel:
    """Stand-in model: returns the ground-truth part containing the first
    prompt point (logits +-8); for driving protocol code without training."""

    def __init__(self, parts):
        self.parts = [np.asarray(p, dtype=bool) for p in parts]
        self.predict_calls = 0

    def start_session(self, cloud, **kw):
        outer = self

        class _Sess:
            def __init__(self):
                self.cloud = cloud
                self.n = cloud.n

            def prompts_from_indices(self, indices, labels, mask_logits=None):
                return PromptSet(points=cloud.points[np.asarray(indices)], labels=labels, mask_logits=mask_logits)

            def predict(self, prompts, multimask=None):
                outer.predict_calls += 1
                target = np.zeros(cloud.n, dtype=bool)
                first = prompts.points[0]
                d = ((cloud.points - first) ** 2).sum(1)
                idx = int(np.argmin(d))
                for part in outer.parts:
                    if part[idx]:
                        target = part
                        break
                logits = np.where(target, 8.0, -8.0).astype(np.float32)
                gate = prompts.q == 1 and prompts.mask_logits is None
                rows = 3 if gate else 1
                return Prediction(
                    logits_t=Tensor(np.tile(logits, (rows, 1))),
                    iou_t=Tensor(np.full(rows, 0.9, dtype=np.float32)),
                    multimask=gate,
                )

        return _Sess()

"""Central finite-difference gradient checking shared across the test suite."""

import numpy as np

from multigran import autograd as ag

STEP = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-7


def numeric_gradient(f, arrays, leaf_index, step=STEP):
    """Central differences of scalar f(arrays) w.r.t. arrays[leaf_index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[leaf_index])
    flat = grad.ravel()
    src = base[leaf_index].ravel()
    for i in range(src.size):
        orig = src[i]
        src[i] = orig + step
        hi = f(base)
        src[i] = orig - step
        lo = f(base)
        src[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def agreement(analytic, numeric, rel=REL_TOL, abs_tol=ABS_TOL):
    """Fraction of entries within rel tolerance (absolute fallback near zero)."""
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    err = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (err <= abs_tol) | (err <= rel * denom)
    return float(ok.mean()) if ok.size else 1.0


def random_program(seed, depth=6, max_size=8):
    """A random composite graph over the core ops, replayable from leaf arrays.

    Returns (leaf_shapes, forward) where forward(arrays) executes the program
    and returns (scalar_root, leaf_tensors).
    """
    gen = np.random.Generator(np.random.PCG64(seed))

    def rand_shape():
        if gen.random() < 0.4:
            return (int(gen.integers(1, max_size + 1)),)
        return (int(gen.integers(1, max_size + 1)), int(gen.integers(1, max_size + 1)))

    leaf_shapes = [rand_shape()]
    shape = leaf_shapes[0]
    instrs = []
    ops = ("tanh", "sigmoid", "add", "mul", "matmul", "scale")
    for _ in range(depth):
        op = ops[gen.integers(len(ops))]
        if op in ("tanh", "sigmoid"):
            instrs.append(("unary", op))
        elif op == "scale":
            instrs.append(("scale", float(gen.uniform(-2.0, 2.0))))
        elif op in ("add", "mul"):
            leaf_shapes.append(shape)
            instrs.append((op, len(leaf_shapes) - 1))
        else:
            cols = int(gen.integers(1, max_size + 1))
            leaf_shapes.append((shape[-1], cols))
            instrs.append(("matmul", len(leaf_shapes) - 1))
            shape = (shape[0], cols) if len(shape) == 2 else (cols,)
    instrs.append(("total",))

    def forward(arrays):
        leaves = [ag.tensor(a) for a in arrays]
        cur = leaves[0]
        for ins in instrs:
            if ins[0] == "unary":
                cur = getattr(ag, ins[1])(cur)
            elif ins[0] == "scale":
                cur = ag.scale(cur, ins[1])
            elif ins[0] in ("add", "mul"):
                cur = getattr(ag, ins[0])(cur, leaves[ins[1]])
            elif ins[0] == "matmul":
                cur = ag.matmul(cur, leaves[ins[1]])
            else:
                cur = ag.total(cur)
        return cur, leaves

    return leaf_shapes, forward


def check_program(seed, depth=6, max_size=8, rel=REL_TOL, abs_tol=ABS_TOL):
    """Worst per-leaf agreement fraction for one random program."""
    leaf_shapes, forward = random_program(seed, depth, max_size)
    gen = np.random.Generator(np.random.PCG64(seed + 7919))
    arrays = [gen.uniform(-1.0, 1.0, size=s) for s in leaf_shapes]
    with ag.Tape():
        root, leaves = forward(arrays)
        ag.backward(root)
    analytic = [leaf.gradient() for leaf in leaves]

    def f(values):
        out, _ = forward(values)
        return float(out.values)

    worst = 1.0
    for i in range(len(arrays)):
        numeric = numeric_gradient(f, arrays, i)
        worst = min(worst, agreement(analytic[i], numeric, rel, abs_tol))
    return worst

"""Property checkers shared by the unit tests and the acceptance suite."""
import math

import numpy as np

from pbcs import nn
from pbcs.backplay import REACH_BONUS, ShapingTarget, potential, shaped_reward

from oracles import central_difference, relative_error


def random_net(rng, act=None):
    depth = int(rng.integers(1, 4))
    sizes = tuple(int(v) for v in rng.integers(2, 9, size=depth + 1))
    act = act or ("tanh" if rng.random() < 0.5 else "linear")
    scale = float(rng.choice([1.0, 0.1])) if act == "tanh" else 1.0
    return nn.init_mlp(sizes, rng, act=act, scale=scale)


def shaping_telescopes(n_traces: int, seed: int) -> float:
    """Worst |sum of shaped rewards - (Phi(s_n) - Phi(s_0))| over random bonus-free traces."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_traces):
        eps = rng.uniform(0.05, 0.3)
        t = ShapingTarget(tuple(rng.uniform(0, 5, 2)), eps)
        n = int(rng.integers(1, 200))
        start = np.array(t.center) + rng.uniform(-3, 3, 2)
        while math.dist(start, t.center) <= eps + 0.15:  # a walk stuck inside the ball never leaves
            start = np.array(t.center) + rng.uniform(-3, 3, 2)
        pts = [start]
        while len(pts) <= n:
            p = pts[-1] + rng.uniform(-0.1, 0.1, 2)
            if math.dist(p, t.center) > eps:
                pts.append(p)
        total = 0.0
        for a, b in zip(pts, pts[1:]):
            r, reached = shaped_reward(a, b, t)
            assert not reached
            total += r
        worst = max(worst, abs(total - (potential(pts[-1], t) - potential(pts[0], t))))
    return worst


def bonus_iff_inside(n_pairs: int, seed: int) -> int:
    """Number of random pairs where the bonus fires but d > eps, or does not fire but d <= eps."""
    rng = np.random.default_rng(seed)
    bad = 0
    t = ShapingTarget((1.0, 1.0), 0.1)
    for _ in range(n_pairs):
        s = rng.uniform(0.5, 1.5, 2)
        s2 = rng.uniform(0.7, 1.3, 2)
        r, reached = shaped_reward(s, s2, t)
        inside = math.hypot(s2[0] - 1.0, s2[1] - 1.0) <= 0.1
        bad += reached != inside or (r == REACH_BONUS) != inside
    return bad


def gradient_check(n_nets: int, seed: int) -> float:
    """Worst relative error of analytic vs central-difference gradients over random nets."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        p = random_net(rng)
        x = rng.normal(size=p.n_in)
        u = rng.normal(size=p.n_out)
        g, gx = nn.gradients(p, x, u)

        def f_params(flat):
            q = nn.MlpParams(p.layer_sizes, flat, p.act, p.scale)
            return float(u @ nn.forward(q, x))

        fd_p = central_difference(f_params, p.flat)
        fd_x = central_difference(lambda xx: float(u @ nn.forward(p, xx)), x)
        worst = max(worst, relative_error(g, fd_p), relative_error(gx, fd_x))
    return worst

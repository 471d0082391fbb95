"""Independent reference implementations shared by the test modules."""

import math

import numpy as np

from seer.rnn import RnnConfig, RnnModel, loss, loss_and_grads, forward


def sig(a):
    return 1.0 / (1.0 + math.exp(-a))


def scalar_embed(x, W, b):
    return [max(0.0, sum(W[i][j] * x[j] for j in range(len(x))) + b[i]) for i in range(len(b))]


def scalar_lstm(x, h, c, W, U, b):
    """Plain-loop LSTM step, gate blocks ordered [i, o, f, g]."""
    H = len(h)
    pre = [sum(W[k][j] * x[j] for j in range(len(x))) + sum(U[k][j] * h[j] for j in range(H)) + b[k]
           for k in range(4 * H)]
    h_new, c_new = [], []
    for n in range(H):
        i, o, f = sig(pre[n]), sig(pre[H + n]), sig(pre[2 * H + n])
        g = math.tanh(pre[3 * H + n])
        cn = i * g + f * c[n]
        c_new.append(cn)
        h_new.append(o * math.tanh(cn))
    return h_new, c_new


def scalar_gru(x, s, W, U):
    """Plain-loop GRU step, blocks ordered [z, r, h]."""
    H = len(s)

    def lin(k, vec_u):
        return sum(W[k][j] * x[j] for j in range(len(x))) + sum(U[k][j] * vec_u[j] for j in range(H))

    z = [sig(lin(n, s)) for n in range(H)]
    r = [sig(lin(H + n, s)) for n in range(H)]
    sr = [s[n] * r[n] for n in range(H)]
    cand = [math.tanh(lin(2 * H + n, sr)) for n in range(H)]
    return [(1 - z[n]) * cand[n] + z[n] * s[n] for n in range(H)]


def scalar_forward(xs, model):
    """Step-by-step logits of one sequence using the loops above."""
    p = {k: v.tolist() for k, v in model.params.items()}
    cfg = model.config
    H = cfg.hidden_dim
    h, c = [0.0] * H, [0.0] * H
    out = []
    for x in xs:
        e = scalar_embed(list(x), p["W_e"], p["b_e"])
        for k in range(1, cfg.embed_layers):
            e = scalar_embed(e, p[f"W_e{k}"], p[f"b_e{k}"])
        if cfg.cell == "lstm":
            h, c = scalar_lstm(e, h, c, p["W"], p["U"], p["b"])
        else:
            h = scalar_gru(e, h, p["W"], p["U"])
        out.append([sum(p["W_y"][k][j] * h[j] for j in range(H)) + p["b_y"][k]
                    for k in range(cfg.num_classes)])
    return np.array(out)


def toy_problem(cell, seed=0, T=6, hidden=8, embed=4, input_dim=3, batch=3, embed_layers=1):
    cfg = RnnConfig(cell=cell, input_dim=input_dim, embed_dim=embed, hidden_dim=hidden, T=T,
                    embed_layers=embed_layers, seed=seed)
    model = RnnModel.initialize(cfg)
    rng = np.random.default_rng(seed + 100)
    for v in model.params.values():  # move biases off zero so every path is exercised
        v += rng.normal(0, 0.3, v.shape)
    x = rng.normal(0, 1, (batch, T, input_dim))
    y = rng.integers(0, cfg.num_classes, (batch, T))
    return model, x, y


def finite_difference_errors(model, x, y, eps=1e-5):
    """Relative error ``|g_a - g_n| / (|g_a| + |g_n|)`` per parameter group."""
    _, grads = loss_and_grads(x, y, model)
    errors = {}
    for name, param in model.params.items():
        num = np.zeros_like(param)
        flat, nflat = param.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss(forward(x, model), y)
            flat[i] = old - eps
            down = loss(forward(x, model), y)
            flat[i] = old
            nflat[i] = (up - down) / (2 * eps)
        denom = np.linalg.norm(grads[name]) + np.linalg.norm(num)
        errors[name] = 0.0 if denom == 0 else float(np.linalg.norm(grads[name] - num) / denom)
    return errors


def brute_force_flags(projections, road, cell_length=5.0, padding=0.5):
    """Enumerate every (lane, bucket) cell of the road and every agent pair."""
    spans = {}
    for agent, path, speed in projections:
        times, arc = [], 0.0
        for i, (x, y) in enumerate(path.xy):
            if i:
                arc += math.dist(path.xy[i - 1], (x, y))
            times.append(arc / speed)
        spans[agent] = (path.xy, times)
    out = set()
    agents = sorted(spans)
    buckets = int(road.road_length // cell_length) + 1
    for lane in range(road.num_lanes_right):
        for bucket in range(buckets):
            claims = {}
            for a in agents:
                xy, times = spans[a]
                hit = [t for (x, y), t in zip(xy, times)
                       if road.lane_of(y) == lane and math.floor(x / cell_length) == bucket]
                if hit:
                    claims[a] = (min(hit), max(hit))
            for i, a in enumerate(agents):
                for b in agents[i + 1:]:
                    if a in claims and b in claims:
                        (a0, a1), (b0, b1) = claims[a], claims[b]
                        if max(a0, b0) - padding <= min(a1, b1) + padding:
                            out.add(((lane, bucket), (a, b)))
    return out

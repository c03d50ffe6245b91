"""Pure numpy implementation of one fused LIO iteration.

Must stay arithmetically identical in structure to ``_fused.pyx``; the two
are compared in ``tests/test_kernels.py``. Layout conventions:

* ``layout = [env_kind, N, M, T, A, obs_dim, policy_hidden, incentive_hidden, batch]``
  with ``env_kind`` 0 for Escape Room and 1 for IPD.
* ``hp = [gamma, beta, alpha, eta_lr, r_max, c_adv]``.
* ``theta[j]`` and ``eta[i]`` are flat parameters ``[w1, b1, w2, b2]``.
* ``uniforms[phase, b, t, j]``: phase 0 is the old trajectory, 1 the new one.
"""
import numpy as np

LIO, PG, PARTIAL, FAKE, BYPASS, REVERSE = range(6)
ER, IPD = 0, 1
IPD_TABLE = np.array([[[-1.0, -1.0], [-3.0, 0.0]], [[0.0, -3.0], [-2.0, -2.0]]])


def _sigmoid(z):
    out = np.empty_like(z)
    for k in range(z.size):
        x = z[k]
        if x >= 0:
            out[k] = 1.0 / (1.0 + np.exp(-x))
        else:
            e = np.exp(x)
            out[k] = e / (1.0 + e)
    return out


class _Net:
    def __init__(self, n_in, n_hidden, n_out):
        self.n_in, self.n_hidden, self.n_out = n_in, n_hidden, n_out
        self.o1 = n_hidden * n_in
        self.o2 = self.o1 + n_hidden
        self.o3 = self.o2 + n_out * n_hidden
        self.size = self.o3 + n_out

    def split(self, p):
        return (p[:self.o1].reshape(self.n_hidden, self.n_in), p[self.o1:self.o2],
                p[self.o2:self.o3].reshape(self.n_out, self.n_hidden), p[self.o3:self.size])

    def hidden_out(self, p, x):
        w1, b1, w2, b2 = self.split(p)
        h = np.tanh(w1 @ x + b1)
        return h, w2 @ h + b2

    def backprop(self, p, x, h, dz):
        """Gradient of ``dz . z`` w.r.t. the flat parameters."""
        _, _, w2, _ = self.split(p)
        dh = (w2.T @ dz) * (1.0 - h * h)
        return np.concatenate([np.outer(dh, x).ravel(), dh, np.outer(dz, h).ravel(), dz])


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _sample(p, u):
    c = 0.0
    for a in range(p.size):
        c += p[a]
        if u < c:
            return a
    return p.size - 1


class _Ctx:
    def __init__(self, layout, hp, modes):
        (self.kind, self.n, self.m, self.horizon, self.n_act, self.obs_dim,
         hp_hidden, hr_hidden, self.batch) = (int(x) for x in layout)
        self.gamma, self.beta, self.alpha, self.eta_lr, self.r_max, self.c_adv = (float(x) for x in hp)
        self.modes = [int(m) for m in modes]
        self.pol = _Net(self.obs_dim, hp_hidden, self.n_act)
        self.inc = _Net(self.obs_dim + (self.n - 1) * self.n_act, hr_hidden, self.n - 1)

    def sign(self, j):
        m = self.modes[j]
        return 0 if m == BYPASS else (-1 if m == REVERSE else 1)

    def receives(self, j):
        return self.modes[j] not in (PARTIAL, FAKE)

    def learned(self, i):
        return self.modes[i] in (LIO, PARTIAL, REVERSE)

    def observe(self, state, j):
        obs = np.zeros(self.obs_dim)
        if self.kind == ER:
            obs[state[j]] = 1.0
            slot = 1
            for k in range(self.n):
                if k != j:
                    obs[3 * slot + state[k]] = 1.0
                    slot += 1
        else:
            if state[0] < 0:
                obs[0] = 1.0
            else:
                obs[1 + 2 * state[j] + state[1 - j]] = 1.0
        return obs

    def inc_input(self, obs_i, actions, i):
        x = np.zeros(self.inc.n_in)
        x[:self.obs_dim] = obs_i
        slot = 0
        for k in range(self.n):
            if k != i:
                x[self.obs_dim + slot * self.n_act + actions[k]] = 1.0
                slot += 1
        return x

    def rollout(self, theta, eta, u, record):
        """Returns per-step lists and (success, length)."""
        n = self.n
        state = [0] * n if self.kind == ER else [-1, -1]
        steps = []
        success = False
        for t in range(self.horizon):
            obs = np.stack([self.observe(state, j) for j in range(n)])
            actions = [0] * n
            hidden = [None] * n
            for j in range(n):
                if self.modes[j] == BYPASS:
                    actions[j] = state[j]
                else:
                    h, z = self.pol.hidden_out(theta[j], obs[j])
                    actions[j] = _sample(_softmax(z), u[t, j])
            mat = np.zeros((n, n))
            inc_x = [None] * n
            inc_h = [None] * n
            if record:
                for i in range(n):
                    if self.learned(i):
                        x = self.inc_input(obs[i], actions, i)
                        h, z = self.inc.hidden_out(eta[i], x)
                        r = self.r_max * _sigmoid(z)
                        inc_x[i], inc_h[i] = x, h
                    elif self.modes[i] == FAKE:
                        r = np.full(n - 1, self.c_adv)
                    else:
                        continue
                    k = 0
                    for j in range(n):
                        if j != i:
                            mat[i, j] = r[k]
                            k += 1
            rew = np.zeros(n)
            done = False
            if self.kind == ER:
                lever = 0
                for j in range(n):
                    if actions[j] != state[j]:
                        rew[j] = -1.0
                    if actions[j] == 1:
                        lever += 1
                if lever >= self.m:
                    for j in range(n):
                        if actions[j] == 2:
                            rew[j] += 10.0
                            done = True
                            success = True
                state = list(actions)
            else:
                rew[0] = IPD_TABLE[actions[0], actions[1], 0]
                rew[1] = IPD_TABLE[actions[0], actions[1], 1]
                state = list(actions)
            if t + 1 >= self.horizon:
                done = True
            steps.append((obs, actions, rew, mat, inc_x, inc_h))
            if done:
                break
        return steps, success

    def returns(self, r):
        out = np.zeros(len(r))
        acc = 0.0
        for t in range(len(r) - 1, -1, -1):
            acc = r[t] + self.gamma * acc
            out[t] = acc
        return out

    def logp_grad(self, params, obs, action):
        h, z = self.pol.hidden_out(params, obs)
        dz = -_softmax(z)
        dz[action] += 1.0
        return self.pol.backprop(params, obs, h, dz)


def iterate(layout, hp, modes, theta, eta, uniforms, out_ep, out_actions, out_recv, ws=None):
    """Run one iteration in place on ``theta``/``eta``; return ``(length, success)`` of episode 0."""
    cx = _Ctx(layout, hp, modes)
    n, B = cx.n, cx.batch
    old = [cx.rollout(theta, eta, uniforms[0, b], True) for b in range(B)]

    # metrics of the first old episode
    steps0, success0 = old[0]
    out_ep[...] = 0.0
    for t, (obs, actions, rew, mat, _, _) in enumerate(steps0):
        for j in range(n):
            recv = 0.0
            given = 0.0
            for k in range(n):
                recv += mat[k, j]
                given += mat[j, k]
            out_ep[0, j] += rew[j]
            out_ep[1, j] += rew[j] + recv if cx.receives(j) else rew[j]
            out_ep[2, j] += given
            out_ep[3, j] += recv
            out_actions[t, j] = actions[j]
            out_recv[t, j] = recv

    # inner policy updates
    grads = {}  # (j, b) -> list of grad log pi per step
    theta_hat = theta.copy()
    for j in range(n):
        s = cx.sign(j)
        if s == 0:
            continue
        acc = np.zeros(cx.pol.size)
        for b in range(B):
            steps, _ = old[b]
            r = np.zeros(len(steps))
            for t, (obs, actions, rew, mat, _, _) in enumerate(steps):
                r[t] = rew[j]
                if cx.receives(j):
                    for k in range(n):
                        r[t] += mat[k, j]
            g_ret = cx.returns(r)
            gl = [cx.logp_grad(theta[j], steps[t][0][j], steps[t][1][j]) for t in range(len(steps))]
            grads[j, b] = gl
            for t in range(len(steps)):
                acc += gl[t] * g_ret[t]
        theta_hat[j] = theta[j] + (s * cx.beta / B) * acc

    # new trajectories and incentive ascent
    new = [cx.rollout(theta_hat, eta, uniforms[1, b], False) for b in range(B)]
    new_grads = {}
    for j in range(n):
        if cx.sign(j) != 0 and cx.receives(j):
            for b in range(B):
                steps, _ = new[b]
                new_grads[j, b] = [cx.logp_grad(theta_hat[j], st[0][j], st[1][j]) for st in steps]
    eta_hat = eta.copy()
    for i in range(n):
        if not cx.learned(i):
            continue
        recips = [j for j in range(n) if j != i and cx.sign(j) != 0 and cx.receives(j)]
        v = {}
        for j in recips:
            acc = np.zeros(cx.pol.size)
            for b in range(B):
                steps, _ = new[b]
                g_ret = cx.returns([st[2][i] for st in steps])
                for t in range(len(steps)):
                    acc += new_grads[j, b][t] * g_ret[t]
            v[j] = acc / B
        grad = np.zeros(cx.inc.size)
        for b in range(B):
            steps, _ = old[b]
            c = {}
            for j in recips:
                dots = [float(grads[j, b][t] @ v[j]) for t in range(len(steps))]
                cj = np.zeros(len(steps))
                acc = 0.0
                for t in range(len(steps)):
                    acc = dots[t] + cx.gamma * acc
                    cj[t] = acc
                c[j] = cj
            disc = 1.0
            for t, (obs, actions, rew, mat, inc_x, inc_h) in enumerate(steps):
                w = np.full(n - 1, -cx.alpha * disc / B)
                for j in recips:
                    k = j if j < i else j - 1
                    w[k] += cx.sign(j) * cx.beta * c[j][t] / B
                x, h = inc_x[i], inc_h[i]
                _, z = cx.inc.hidden_out(eta[i], x)
                sg = _sigmoid(z)
                dz = w * cx.r_max * sg * (1.0 - sg)
                grad += cx.inc.backprop(eta[i], x, h, dz)
                disc *= cx.gamma
        eta_hat[i] = eta[i] + cx.eta_lr * grad

    theta[...] = theta_hat
    eta[...] = eta_hat
    return len(steps0), bool(success0)

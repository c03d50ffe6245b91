# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused LIO iteration; mirrors ``_pyfused.iterate`` step for step."""
from libc.math cimport exp, tanh
from libc.stdlib cimport calloc, free
from libc.string cimport memcpy, memset

cdef enum:
    LIO = 0
    PG = 1
    PARTIAL = 2
    FAKE = 3
    BYPASS = 4
    REVERSE = 5

cdef double IPD_R[2][2][2]
IPD_R[0][0][0] = -1.0; IPD_R[0][0][1] = -1.0
IPD_R[0][1][0] = -3.0; IPD_R[0][1][1] = 0.0
IPD_R[1][0][0] = 0.0;  IPD_R[1][0][1] = -3.0
IPD_R[1][1][0] = -2.0; IPD_R[1][1][1] = -2.0


cdef struct Ctx:
    int kind, n, m, horizon, n_act, obs_dim, hp_hid, hr_hid, batch
    double gamma, beta, alpha, eta_lr, r_max, c_adv
    long* modes
    int p_pol, p_inc, inc_in


cdef struct Roll:
    # all indexed [b][t][...]
    double* obs      # B*T*N*D
    long* act        # B*T*N
    double* rew      # B*T*N
    double* mat      # B*T*N*N
    double* hid      # B*T*N*Hp  policy hidden activations
    double* prob     # B*T*N*A   policy probabilities
    int* length      # B
    int* success     # B


cdef inline double sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline int sign_of(Ctx* c, int j) nogil:
    if c.modes[j] == BYPASS:
        return 0
    if c.modes[j] == REVERSE:
        return -1
    return 1


cdef inline bint receives(Ctx* c, int j) nogil:
    return c.modes[j] != PARTIAL and c.modes[j] != FAKE


cdef inline bint learned(Ctx* c, int i) nogil:
    return c.modes[i] == LIO or c.modes[i] == PARTIAL or c.modes[i] == REVERSE


cdef void net_forward(const double* p, const double* x, int ni, int nh, int no,
                      double* h, double* z) nogil:
    cdef int a, k
    cdef double s
    cdef const double* w1 = p
    cdef const double* b1 = p + nh * ni
    cdef const double* w2 = b1 + nh
    cdef const double* b2 = w2 + no * nh
    for a in range(nh):
        s = 0.0
        for k in range(ni):
            s += w1[a * ni + k] * x[k]
        h[a] = tanh(s + b1[a])
    for a in range(no):
        s = 0.0
        for k in range(nh):
            s += w2[a * nh + k] * h[k]
        z[a] = s + b2[a]


cdef void net_backprop(const double* p, const double* x, const double* h, const double* dz,
                       int ni, int nh, int no, double coef, double* out, double* dh) nogil:
    """out += coef * d(dz . z)/dp."""
    cdef int a, k
    cdef double s
    cdef const double* w2 = p + nh * ni + nh
    cdef double* g_w1 = out
    cdef double* g_b1 = out + nh * ni
    cdef double* g_w2 = g_b1 + nh
    cdef double* g_b2 = g_w2 + no * nh
    for k in range(nh):
        s = 0.0
        for a in range(no):
            s += w2[a * nh + k] * dz[a]
        dh[k] = s * (1.0 - h[k] * h[k])
    for a in range(nh):
        for k in range(ni):
            g_w1[a * ni + k] += coef * (dh[a] * x[k])
        g_b1[a] += coef * dh[a]
    for a in range(no):
        for k in range(nh):
            g_w2[a * nh + k] += coef * (dz[a] * h[k])
        g_b2[a] += coef * dz[a]


cdef void softmax(const double* z, int n, double* p) nogil:
    cdef int a
    cdef double mx = z[0], s = 0.0
    for a in range(1, n):
        if z[a] > mx:
            mx = z[a]
    for a in range(n):
        p[a] = exp(z[a] - mx)
        s += p[a]
    for a in range(n):
        p[a] = p[a] / s


cdef void observe(Ctx* c, const long* state, int j, double* obs) nogil:
    cdef int k, slot
    memset(obs, 0, c.obs_dim * sizeof(double))
    if c.kind == 0:
        obs[state[j]] = 1.0
        slot = 1
        for k in range(c.n):
            if k != j:
                obs[3 * slot + state[k]] = 1.0
                slot += 1
    else:
        if state[0] < 0:
            obs[0] = 1.0
        else:
            obs[1 + 2 * state[j] + state[1 - j]] = 1.0


cdef void inc_input(Ctx* c, const double* obs_i, const long* act, int i, double* x) nogil:
    cdef int k, slot = 0
    memset(x, 0, c.inc_in * sizeof(double))
    memcpy(x, obs_i, c.obs_dim * sizeof(double))
    for k in range(c.n):
        if k != i:
            x[c.obs_dim + slot * c.n_act + act[k]] = 1.0
            slot += 1


cdef void emit(Ctx* c, const double* eta_i, int i, const double* obs_i, const long* act,
               double* x, double* h, double* z, double* mat_row) nogil:
    cdef int k, j
    if learned(c, i):
        inc_input(c, obs_i, act, i, x)
        net_forward(eta_i, x, c.inc_in, c.hr_hid, c.n - 1, h, z)
        k = 0
        for j in range(c.n):
            if j != i:
                mat_row[j] = c.r_max * sigmoid(z[k])
                k += 1
    elif c.modes[i] == FAKE:
        for j in range(c.n):
            if j != i:
                mat_row[j] = c.c_adv


cdef void rollout(Ctx* c, const double* theta, const double* eta, const double* u,
                  Roll* r, int b, bint record, double* scratch) nogil:
    cdef int n = c.n, t, j, k, lever, a, T = c.horizon, D = c.obs_dim
    cdef long state[64]
    cdef double* h = scratch
    cdef double* z = h + (c.hp_hid if c.hp_hid > c.hr_hid else c.hr_hid)
    cdef double* p
    cdef double* hp_
    cdef double* x = z + 64
    cdef double cum
    cdef double* obs
    cdef long* act
    cdef double* rew
    cdef double* mat
    cdef bint done
    for j in range(n):
        state[j] = 0 if c.kind == 0 else -1
    r.success[b] = 0
    r.length[b] = 0
    for t in range(T):
        obs = r.obs + ((b * T + t) * n) * D
        act = r.act + (b * T + t) * n
        rew = r.rew + (b * T + t) * n
        mat = r.mat + ((b * T + t) * n) * n
        for j in range(n):
            observe(c, state, j, obs + j * D)
        for j in range(n):
            if c.modes[j] == BYPASS:
                act[j] = state[j]
            else:
                hp_ = r.hid + ((b * T + t) * n + j) * c.hp_hid
                p = r.prob + ((b * T + t) * n + j) * c.n_act
                net_forward(theta + j * c.p_pol, obs + j * D, D, c.hp_hid, c.n_act, hp_, z)
                softmax(z, c.n_act, p)
                cum = 0.0
                act[j] = c.n_act - 1
                for a in range(c.n_act):
                    cum += p[a]
                    if u[(t * n) + j] < cum:
                        act[j] = a
                        break
        memset(mat, 0, n * n * sizeof(double))
        if record:
            for j in range(n):
                emit(c, eta + j * c.p_inc, j, obs + j * D, act, x, h, z, mat + j * n)
        done = False
        for j in range(n):
            rew[j] = 0.0
        if c.kind == 0:
            lever = 0
            for j in range(n):
                if act[j] != state[j]:
                    rew[j] = -1.0
                if act[j] == 1:
                    lever += 1
            if lever >= c.m:
                for j in range(n):
                    if act[j] == 2:
                        rew[j] += 10.0
                        done = True
                        r.success[b] = 1
        else:
            rew[0] = IPD_R[act[0]][act[1]][0]
            rew[1] = IPD_R[act[0]][act[1]][1]
        for j in range(n):
            state[j] = act[j]
        r.length[b] = t + 1
        if t + 1 >= T:
            done = True
        if done:
            break


cdef void layout_ctx(Ctx* c, long[::1] layout) except *:
    c.kind = layout[0]; c.n = layout[1]; c.m = layout[2]; c.horizon = layout[3]
    c.n_act = layout[4]; c.obs_dim = layout[5]; c.hp_hid = layout[6]; c.hr_hid = layout[7]
    c.batch = layout[8]
    if c.n > 64 or c.n_act > 64 or c.n < 2 or c.hp_hid < 1 or c.hr_hid < 1 or c.batch < 1:
        raise ValueError("layout out of kernel range")
    c.p_pol = c.hp_hid * c.obs_dim + c.hp_hid + c.n_act * c.hp_hid + c.n_act
    c.inc_in = c.obs_dim + (c.n - 1) * c.n_act
    c.p_inc = c.hr_hid * c.inc_in + c.hr_hid + (c.n - 1) * c.hr_hid + (c.n - 1)


cdef int alloc_roll(Roll* r, Ctx* c):
    cdef size_t steps = c.batch * c.horizon
    r.obs = <double*> calloc(steps * c.n * c.obs_dim, sizeof(double))
    r.act = <long*> calloc(steps * c.n, sizeof(long))
    r.rew = <double*> calloc(steps * c.n, sizeof(double))
    r.mat = <double*> calloc(steps * c.n * c.n, sizeof(double))
    r.hid = <double*> calloc(steps * c.n * c.hp_hid, sizeof(double))
    r.prob = <double*> calloc(steps * c.n * c.n_act, sizeof(double))
    r.length = <int*> calloc(c.batch, sizeof(int))
    r.success = <int*> calloc(c.batch, sizeof(int))
    return r.obs != NULL and r.act != NULL and r.rew != NULL and r.mat != NULL \
        and r.hid != NULL and r.prob != NULL and r.length != NULL and r.success != NULL


cdef void free_roll(Roll* r):
    free(r.obs); free(r.act); free(r.rew); free(r.mat); free(r.hid); free(r.prob)
    free(r.length); free(r.success)


cdef class Workspace:
    """Scratch buffers for one layout, allocated once and reused across iterations."""
    cdef readonly tuple key
    cdef Roll old, new
    cdef double* scratch
    cdef double* grads
    cdef double* new_grads
    cdef double* theta_hat
    cdef double* eta_hat
    cdef double* acc_v
    cdef double* v
    cdef double* ret
    cdef double* cj
    cdef double* w
    cdef double* gq
    cdef double* x
    cdef double* hbuf
    cdef double* dh
    cdef double* zbuf
    cdef bint* rec

    def __cinit__(self, long[::1] layout):
        cdef Ctx c
        layout_ctx(&c, layout)
        self.key = tuple(layout)
        cdef int n = c.n, B = c.batch, T = c.horizon, P = c.p_pol, Q = c.p_inc
        ok = alloc_roll(&self.old, &c) and alloc_roll(&self.new, &c)
        self.scratch = <double*> calloc(4 * (c.hp_hid + c.hr_hid + c.inc_in + 256), sizeof(double))
        self.grads = <double*> calloc(B * T * n * P, sizeof(double))
        self.new_grads = <double*> calloc(B * T * n * P, sizeof(double))
        self.theta_hat = <double*> calloc(n * P, sizeof(double))
        self.eta_hat = <double*> calloc(n * Q, sizeof(double))
        self.acc_v = <double*> calloc(P, sizeof(double))
        self.v = <double*> calloc(n * P, sizeof(double))
        self.ret = <double*> calloc(T, sizeof(double))
        self.cj = <double*> calloc(n * T, sizeof(double))
        self.w = <double*> calloc(n, sizeof(double))
        self.gq = <double*> calloc(Q, sizeof(double))
        self.x = <double*> calloc(c.inc_in, sizeof(double))
        self.hbuf = <double*> calloc(c.hr_hid + 1, sizeof(double))
        self.dh = <double*> calloc(c.hr_hid + 1, sizeof(double))
        self.zbuf = <double*> calloc(n, sizeof(double))
        self.rec = <bint*> calloc(n, sizeof(bint))
        if not (ok and self.scratch and self.grads and self.new_grads and self.theta_hat
                and self.eta_hat and self.acc_v and self.v and self.ret and self.cj and self.w
                and self.gq and self.x and self.hbuf and self.dh and self.zbuf and self.rec):
            raise MemoryError()

    def __dealloc__(self):
        free_roll(&self.old); free_roll(&self.new)
        free(self.scratch); free(self.grads); free(self.new_grads); free(self.theta_hat)
        free(self.eta_hat); free(self.acc_v); free(self.v); free(self.ret); free(self.cj)
        free(self.w); free(self.gq); free(self.x); free(self.hbuf); free(self.dh)
        free(self.zbuf); free(self.rec)


cdef void logp_grad(Ctx* c, const double* params, Roll* r, int b, int t, int j,
                    double* out, double* scratch) nogil:
    """out = d log pi(a|o) / d params at step (b, t) of agent j (overwrites)."""
    cdef int n = c.n, T = c.horizon
    cdef int idx = (b * T + t) * n + j
    cdef const double* h = r.hid + idx * c.hp_hid
    cdef const double* prob = r.prob + idx * c.n_act
    cdef double* dz = scratch
    cdef double* dh = dz + 64
    cdef int a
    for a in range(c.n_act):
        dz[a] = -prob[a]
    dz[r.act[idx]] += 1.0
    memset(out, 0, c.p_pol * sizeof(double))
    net_backprop(params, r.obs + idx * c.obs_dim, h, dz, c.obs_dim, c.hp_hid, c.n_act, 1.0, out, dh)


def iterate(long[::1] layout, double[::1] hp, long[::1] modes, double[:, ::1] theta,
            double[:, ::1] eta, double[:, :, :, ::1] uniforms, double[:, ::1] out_ep,
            long[:, ::1] out_actions, double[:, ::1] out_recv, ws=None):
    """Run one iteration in place on ``theta``/``eta``; return ``(length, success)`` of episode 0.

    ``ws`` is a :class:`Workspace` for this layout; reusing one avoids
    per-call allocation.
    """
    cdef Ctx c
    layout_ctx(&c, layout)
    c.gamma = layout[0]; c.n = layout[1]; c.m = layout[2]; c.horizon = layout[3]
    c.n_act = layout[4]; c.obs_dim = layout[5]; c.hp_hid = layout[6]; c.hr_hid = layout[7]
    c.batch = layout[8]
    c.gamma = hp[0]; c.beta = hp[1]; c.alpha = hp[2]; c.eta_lr = hp[3]; c.r_max = hp[4]; c.c_adv = hp[5]
    c.modes = &modes[0]
    if theta.shape[0] != c.n or theta.shape[1] != c.p_pol:
        raise ValueError(f"theta shape {theta.shape[0]}x{theta.shape[1]} != {c.n}x{c.p_pol}")
    if eta.shape[0] != c.n or eta.shape[1] != c.p_inc:
        raise ValueError(f"eta shape {eta.shape[0]}x{eta.shape[1]} != {c.n}x{c.p_inc}")
    if (uniforms.shape[0] != 2 or uniforms.shape[1] != c.batch or uniforms.shape[2] != c.horizon
            or uniforms.shape[3] != c.n):
        raise ValueError("uniforms must have shape (2, batch, horizon, n_agents)")

    cdef int n = c.n, B = c.batch, T = c.horizon, D = c.obs_dim, P = c.p_pol, Q = c.p_inc
    cdef int b, t, j, i, k, a, L, s
    cdef double acc, recv, given, disc, sg, coef
    if ws is None:
        ws = Workspace(layout)
    cdef Workspace wk = <Workspace?> ws
    if wk.key != tuple(layout):
        raise ValueError("workspace was built for a different layout")
    cdef Roll old = wk.old
    cdef Roll new = wk.new
    cdef double* scratch = wk.scratch
    cdef double* grads = wk.grads          # [b][t][j][P]
    cdef double* new_grads = wk.new_grads
    cdef double* theta_hat = wk.theta_hat
    cdef double* eta_hat = wk.eta_hat
    cdef double* acc_v = wk.acc_v
    cdef double* v = wk.v
    cdef double* ret = wk.ret
    cdef double* cj = wk.cj
    cdef double* w = wk.w
    cdef double* gq = wk.gq
    cdef double* x = wk.x
    cdef double* hbuf = wk.hbuf
    cdef double* dh = wk.dh
    cdef double* zbuf = wk.zbuf
    cdef bint* rec = wk.rec
    cdef int length0 = 0, success0 = 0

    cdef double* th = &theta[0, 0]
    cdef double* et = &eta[0, 0]
    with nogil:
        for b in range(B):
            rollout(&c, th, et, &uniforms[0, b, 0, 0], &old, b, True, scratch)

        # metrics of the first old episode
        length0 = old.length[0]
        success0 = old.success[0]
        for k in range(4):
            for j in range(n):
                out_ep[k, j] = 0.0
        for t in range(length0):
            for j in range(n):
                recv = 0.0
                given = 0.0
                for k in range(n):
                    recv += old.mat[(t * n + k) * n + j]
                    given += old.mat[(t * n + j) * n + k]
                out_ep[0, j] += old.rew[t * n + j]
                if receives(&c, j):
                    out_ep[1, j] += old.rew[t * n + j] + recv
                else:
                    out_ep[1, j] += old.rew[t * n + j]
                out_ep[2, j] += given
                out_ep[3, j] += recv
                out_actions[t, j] = old.act[t * n + j]
                out_recv[t, j] = recv

        # inner policy updates
        memcpy(theta_hat, th, n * P * sizeof(double))
        for j in range(n):
            s = sign_of(&c, j)
            if s == 0:
                continue
            memset(acc_v, 0, P * sizeof(double))
            for b in range(B):
                L = old.length[b]
                acc = 0.0
                for t in range(L - 1, -1, -1):
                    ret[t] = old.rew[(b * T + t) * n + j]
                    if receives(&c, j):
                        for k in range(n):
                            ret[t] += old.mat[((b * T + t) * n + k) * n + j]
                    acc = ret[t] + c.gamma * acc
                    ret[t] = acc
                for t in range(L):
                    logp_grad(&c, th + j * P, &old, b, t, j, grads + ((b * T + t) * n + j) * P, scratch)
                    for k in range(P):
                        acc_v[k] += grads[((b * T + t) * n + j) * P + k] * ret[t]
            coef = (s * c.beta) / B
            for k in range(P):
                theta_hat[j * P + k] = th[j * P + k] + coef * acc_v[k]

        # new trajectories and incentive ascent
        for b in range(B):
            rollout(&c, theta_hat, et, &uniforms[1, b, 0, 0], &new, b, False, scratch)
        for j in range(n):
            if sign_of(&c, j) == 0 or not receives(&c, j):
                continue
            for b in range(B):
                for t in range(new.length[b]):
                    logp_grad(&c, theta_hat + j * P, &new, b, t, j,
                              new_grads + ((b * T + t) * n + j) * P, scratch)
        memcpy(eta_hat, et, n * Q * sizeof(double))
        for i in range(n):
            if not learned(&c, i):
                continue
            for j in range(n):
                rec[j] = j != i and sign_of(&c, j) != 0 and receives(&c, j)
            for j in range(n):
                if not rec[j]:
                    continue
                memset(acc_v, 0, P * sizeof(double))
                for b in range(B):
                    L = new.length[b]
                    acc = 0.0
                    for t in range(L - 1, -1, -1):
                        acc = new.rew[(b * T + t) * n + i] + c.gamma * acc
                        ret[t] = acc
                    for t in range(L):
                        for k in range(P):
                            acc_v[k] += new_grads[((b * T + t) * n + j) * P + k] * ret[t]
                for k in range(P):
                    v[j * P + k] = acc_v[k] / B
            memset(gq, 0, Q * sizeof(double))
            for b in range(B):
                L = old.length[b]
                for j in range(n):
                    if not rec[j]:
                        continue
                    acc = 0.0
                    for t in range(L):
                        sg = 0.0
                        for k in range(P):
                            sg += grads[((b * T + t) * n + j) * P + k] * v[j * P + k]
                        acc = sg + c.gamma * acc
                        cj[j * T + t] = acc
                disc = 1.0
                for t in range(L):
                    for k in range(n - 1):
                        w[k] = -c.alpha * disc / B
                    for j in range(n):
                        if rec[j]:
                            k = j if j < i else j - 1
                            w[k] += sign_of(&c, j) * c.beta * cj[j * T + t] / B
                    inc_input(&c, old.obs + ((b * T + t) * n + i) * D, old.act + (b * T + t) * n, i, x)
                    net_forward(et + i * Q, x, c.inc_in, c.hr_hid, n - 1, hbuf, zbuf)
                    for k in range(n - 1):
                        sg = sigmoid(zbuf[k])
                        zbuf[k] = w[k] * c.r_max * sg * (1.0 - sg)
                    net_backprop(et + i * Q, x, hbuf, zbuf, c.inc_in, c.hr_hid, n - 1, 1.0, gq, dh)
                    disc *= c.gamma
            for k in range(Q):
                eta_hat[i * Q + k] = et[i * Q + k] + c.eta_lr * gq[k]

        memcpy(th, theta_hat, n * P * sizeof(double))
        memcpy(et, eta_hat, n * Q * sizeof(double))

    return length0, bool(success0)

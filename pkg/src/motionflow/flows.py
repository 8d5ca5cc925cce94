"""Invertible building blocks: actnorm, LU-parameterised linear map, and a
recurrent conditional affine coupling.

Each block applies per frame to a [B, D] batch and reports its exact
log-Jacobian-determinant contribution. Normalising direction maps data toward
the latent; generative direction is the exact inverse. The generative path of
the linear map goes through triangular solves and is not differentiable;
nothing is ever trained through it.

Log-det conventions (normalising direction; negated for generative):
  actnorm / linear : scalar per frame per sequence, independent of batch
  coupling         : summed over the batch for the given frame
"""

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .autodiff import LstmCellParams, parameter, tensor
from .errors import ContractError, DegenerateDataError, DimensionError


class ActNorm:
    """Per-channel affine y = s*x + t, data-initialised to whiten the first
    training batch. Stands in for batch normalisation."""

    def __init__(self, dim, dtype=np.float64):
        self.dim = dim
        self.log_s = parameter(np.zeros(dim), dtype=dtype)
        self.t = parameter(np.zeros(dim), dtype=dtype)
        self.initialized = False

    def params(self):
        return [("log_s", self.log_s), ("t", self.t)]

    def initialize_identity(self):
        """Keep s=1, t=0; for models evaluated straight from construction."""
        self.initialized = True

    def initialize(self, batch):
        """Set s,t from the per-channel moments of `batch` [B,D] so that the
        output has zero mean and unit variance on it."""
        batch = np.asarray(batch)
        if batch.ndim != 2 or batch.shape[0] < 2:
            raise DimensionError("actnorm init needs a [B>=2, D] batch")
        mean = batch.mean(axis=0)
        std = batch.std(axis=0)
        if np.any(std == 0.0):
            dead = np.flatnonzero(std == 0.0)
            raise DegenerateDataError(
                "zero-variance channel(s) %s in actnorm init" % dead.tolist())
        dtype = self.log_s.data.dtype
        self.log_s.data = (-np.log(std)).astype(dtype)
        self.t.data = (-mean / std).astype(dtype)
        self.initialized = True

    def prepare(self):
        """Tensors reused across every frame of one training iteration."""
        s = ad.exp(self.log_s)
        logdet = ad.sum_all(self.log_s)
        return s, logdet

    def normalize(self, x, prep=None):
        if not self.initialized:
            raise ContractError("actnorm applied before initialisation")
        s, logdet = self.prepare() if prep is None else prep
        y = ad.add_row(ad.mul_row(x, s), self.t)
        return y, logdet

    def generate(self, y, prep=None):
        if not self.initialized:
            raise ContractError("actnorm applied before initialisation")
        _, logdet = self.prepare() if prep is None else prep
        inv_s = ad.exp(ad.neg(self.log_s))
        x = ad.mul_row(ad.add_row(y, ad.neg(self.t)), inv_s)
        return x, ad.neg(logdet)


class InvertibleLinear:
    """Dense channel-mixing map y = W x with W = L U.

    L has unit diagonal; U's diagonal is sign_d * exp(log_u_d) with the signs
    frozen at init. W starts as a random rotation (LU-factorised once), so the
    initial map is orthogonal and the initial log-det is zero. Learning moves
    the strict triangles and log|u_dd| freely; det W can never hit zero.
    """

    def __init__(self, dim, rng, dtype=np.float64):
        self.dim = dim
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        p, l, u = scipy.linalg.lu(q)
        del p  # model weight is L U = P^T Q, also orthogonal
        diag = np.diag(u).copy()
        self.sign = np.sign(diag).astype(dtype)
        self.log_u = parameter(np.log(np.abs(diag)), dtype=dtype)
        self.l_free = parameter(np.tril(l, -1), dtype=dtype)
        self.u_free = parameter(np.triu(u, 1), dtype=dtype)
        self._mask_l = np.tril(np.ones((dim, dim)), -1).astype(dtype)
        self._mask_u = self._mask_l.T.copy()
        self._eye = np.eye(dim, dtype=dtype)

    def params(self):
        return [("log_u", self.log_u), ("l_free", self.l_free),
                ("u_free", self.u_free)]

    def _factors(self):
        l = ad.add(ad.mul(self.l_free, tensor(self._mask_l, self._mask_l.dtype)),
                   tensor(self._eye, self._eye.dtype))
        u_diag = ad.mul(ad.exp(self.log_u), tensor(self.sign, self.sign.dtype))
        u = ad.add(ad.mul(self.u_free, tensor(self._mask_u, self._mask_u.dtype)),
                   ad.diag_embed(u_diag))
        return l, u

    def prepare(self):
        l, u = self._factors()
        w_t = ad.transpose(ad.matmul(l, u))
        logdet = ad.sum_all(self.log_u)
        return w_t, logdet

    def weight(self):
        """Current dense W as a plain array."""
        l, u = self._factors()
        return ad.matmul(l, u).data

    def normalize(self, x, prep=None):
        w_t, logdet = self.prepare() if prep is None else prep
        return ad.matmul(x, w_t), logdet

    def generate(self, y, prep=None):
        # two triangular solves; outside the autodiff graph by design
        _, logdet = self.prepare() if prep is None else prep
        l = self._eye + self._mask_l * self.l_free.data
        u = self._mask_u * self.u_free.data \
            + np.diag(self.sign * np.exp(self.log_u.data))
        mid = scipy.linalg.solve_triangular(l, y.data.T, lower=True,
                                            unit_diagonal=True)
        x = scipy.linalg.solve_triangular(u, mid, lower=False).T
        return tensor(np.ascontiguousarray(x), dtype=y.data.dtype), \
            ad.neg(logdet)


class CouplingState:
    """Recurrent (h, c) pairs for the two LSTM layers of one coupling net."""

    __slots__ = ("h1", "c1", "h2", "c2")

    def __init__(self, h1, c1, h2, c2):
        self.h1, self.c1, self.h2, self.c2 = h1, c1, h2, c2

    @staticmethod
    def zeros(batch, hidden, dtype=np.float64):
        z = lambda: tensor(np.zeros((batch, hidden)), dtype=dtype)
        return CouplingState(z(), z(), z(), z())

    def detach(self):
        """Copy of the state cut loose from any graph history."""
        c = lambda t: tensor(t.data.copy(), dtype=t.data.dtype)
        return CouplingState(c(self.h1), c(self.c1), c(self.h2), c(self.c2))


def _scale_head_bias(eps, width, dtype):
    # pick the float bias whose sigmoid lands exactly on 1 - eps, so the
    # freshly initialised coupling is an exact identity; scan a few ulps
    # around logit(1 - eps) because log/exp rounding rarely cooperates
    from scipy.special import expit
    b = float(np.log((1.0 - eps) / eps))
    best, best_err = b, abs(float(expit(b)) + eps - 1.0)
    for k in range(-4, 5):
        cand = b + k * np.spacing(b)
        err = abs(float(expit(cand)) + eps - 1.0)
        if err < best_err:
            best, best_err = cand, err
    return np.full(width, best, dtype=dtype)


class AffineCoupling:
    """Conditional affine coupling with a two-layer recurrent conditioner.

    Channels split into lo (first ceil(D/2)) and hi. The conditioner consumes
    [b_lo, cond] plus its recurrent state and emits a bounded scale
    s' = sigmoid(pre) + eps in (eps, 1+eps) and a free shift t'. Normalising:
    z_hi = (b_hi + t') * s'. The state advances identically in both
    directions because both see the same (b_lo, cond) input.
    """

    def __init__(self, dim, cond_dim, hidden, rng, eps=0.05,
                 split_lo=None, dtype=np.float64):
        self.dim = dim
        self.d_lo = int(np.ceil(dim / 2)) if split_lo is None else split_lo
        if not 0 < self.d_lo <= dim:
            raise DimensionError("coupling split outside [1, D]")
        self.d_hi = dim - self.d_lo
        self.cond_dim = cond_dim
        self.hidden = hidden
        self.eps = eps
        self.cell1 = LstmCellParams.create(self.d_lo + cond_dim, hidden, rng,
                                           dtype=dtype)
        self.cell2 = LstmCellParams.create(hidden, hidden, rng, dtype=dtype)
        self.w_shift = parameter(np.zeros((hidden, self.d_hi)), dtype=dtype)
        self.b_shift = parameter(np.zeros(self.d_hi), dtype=dtype)
        self.w_scale = parameter(np.zeros((hidden, self.d_hi)), dtype=dtype)
        self.b_scale = parameter(_scale_head_bias(eps, self.d_hi, dtype))

    def params(self):
        out = []
        for tag, cell in (("lstm1", self.cell1), ("lstm2", self.cell2)):
            out += [(tag + ".wx", cell.wx), (tag + ".wh", cell.wh),
                    (tag + ".b", cell.b)]
        out += [("w_shift", self.w_shift), ("b_shift", self.b_shift),
                ("w_scale", self.w_scale), ("b_scale", self.b_scale)]
        return out

    def net_eval(self, b_lo, cond, state, cond_proj=None):
        """Run the conditioner one frame. Returns (s', t', next state).

        cond_proj, when given, replaces cond with its precomputed projection
        through the tail rows of cell1.wx (see the training loop).
        """
        if cond_proj is None:
            inp = ad.concat_cols([b_lo, cond])
            h1, c1 = ad.lstm_cell(inp, state.h1, state.c1, self.cell1)
        else:
            head = LstmCellParams(ad.slice_rows(self.cell1.wx, 0, self.d_lo),
                                  self.cell1.wh, self.cell1.b)
            h1, c1 = ad.lstm_cell(b_lo, state.h1, state.c1, head,
                                  x_proj=cond_proj)
        h2, c2 = ad.lstm_cell(h1, state.h2, state.c2, self.cell2)
        shift = ad.add_row(ad.matmul(h2, self.w_shift), self.b_shift)
        scale = ad.add(ad.sigmoid(ad.add_row(ad.matmul(h2, self.w_scale),
                                             self.b_scale)), self.eps)
        return scale, shift, CouplingState(h1, c1, h2, c2)

    def normalize(self, b, cond, state, cond_proj=None):
        b_lo = ad.slice_cols(b, 0, self.d_lo)
        b_hi = ad.slice_cols(b, self.d_lo, self.dim)
        scale, shift, state2 = self.net_eval(b_lo, cond, state, cond_proj)
        z_hi = ad.mul(ad.add(b_hi, shift), scale)
        z = ad.concat_cols([b_lo, z_hi])
        logdet = ad.sum_all(ad.log(scale))
        return z, logdet, state2

    def generate(self, z, cond, state, cond_proj=None):
        z_lo = ad.slice_cols(z, 0, self.d_lo)
        z_hi = ad.slice_cols(z, self.d_lo, self.dim)
        scale, shift, state2 = self.net_eval(z_lo, cond, state, cond_proj)
        b_hi = ad.sub(ad.div(z_hi, scale), shift)
        b = ad.concat_cols([z_lo, b_hi])
        logdet = ad.neg(ad.sum_all(ad.log(scale)))
        return b, logdet, state2


class FlowStep:
    """One full step: actnorm, then the linear mix, then the coupling."""

    def __init__(self, dim, cond_dim, hidden, rng, eps=0.05, split_lo=None,
                 dtype=np.float64):
        self.actnorm = ActNorm(dim, dtype=dtype)
        self.linear = InvertibleLinear(dim, rng, dtype=dtype)
        self.coupling = AffineCoupling(dim, cond_dim, hidden, rng, eps=eps,
                                       split_lo=split_lo, dtype=dtype)

    def params(self):
        out = [("actnorm." + k, p) for k, p in self.actnorm.params()]
        out += [("linear." + k, p) for k, p in self.linear.params()]
        out += [("coupling." + k, p) for k, p in self.coupling.params()]
        return out

    def prepare(self):
        return self.actnorm.prepare(), self.linear.prepare()

    def normalize(self, x, cond, state, prep=None, cond_proj=None):
        an_prep, lin_prep = prep if prep is not None else (None, None)
        a, ld_an = self.actnorm.normalize(x, an_prep)
        b, ld_lin = self.linear.normalize(a, lin_prep)
        z, ld_cpl, state2 = self.coupling.normalize(b, cond, state, cond_proj)
        return z, (ld_an, ld_lin, ld_cpl), state2

    def generate(self, z, cond, state, prep=None, cond_proj=None):
        an_prep, lin_prep = prep if prep is not None else (None, None)
        b, ld_cpl, state2 = self.coupling.generate(z, cond, state, cond_proj)
        a, ld_lin = self.linear.generate(b, lin_prep)
        x, ld_an = self.actnorm.generate(a, an_prep)
        return x, (ld_an, ld_lin, ld_cpl), state2

"""Physics-informed core: explicit-Euler latent rollout, residual losses,
and the three-subnet variational battery model over a simplified
equivalent-circuit cell.

The latent battery state is x = (q_b, q_sp, q_s): bulk charge, surface-
overpotential charge, and a diffusion charge, all in charge units. The
simplified circuit used here (and by the synthetic generator) is

    dq_b/dt  = -i                         (charge conservation)
    dq_sp/dt =  i - q_sp * (1/R_sp)/C_sp  (surface RC element)
    dq_s/dt  =  i - q_s  / (R_s * C_s)    (slow diffusion element)
    V        =  V_b - i*R_s - q_sp/C_sp   (terminal voltage)

with V_b, SOC and 1/R_sp supplied by small networks (SOC = soc(q_b),
V_b = vb(q_b, SOC), 1/R_sp = rsp(SOC)). The diffusion charge is carried
as part of the latent state but this variant's decoder does not read it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import Dense
from .models import VariationalRegressor, make_dense_regressor
from .numkit import RngStream
from .varlayer import softplus_inv


def _col(x, j):
    if isinstance(x, ad.Var):
        return ad.narrow(x, 1, j, 1)
    return x[:, j : j + 1]


def _cat(cols):
    if isinstance(cols[0], ad.Var):
        return ad.concat(cols, axis=1)
    return np.concatenate(cols, axis=1)


class Mlp:
    """Plain dense stack; the deterministic f/h networks of the generic model."""

    def __init__(self, dims: list[int], stream: RngStream, activation: str = "tanh"):
        self.layers = []
        for i in range(len(dims) - 1):
            act = activation if i < len(dims) - 2 else "identity"
            self.layers.append(Dense.init(dims[i], dims[i + 1], act, stream.derive(i)))

    def __call__(self, x: ad.Var) -> ad.Var:
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self, prefix):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.params(f"{prefix}.l{i}"))
        return out


class PinnModel:
    """Generic latent-dynamics model: x' = f(x, u), y = h(x), explicit Euler."""

    def __init__(self, f_net: Mlp, h_net: Mlp, dt: float, lam: float = 1.0):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if lam < 0:
            raise ValueError("physics weight must be nonnegative")
        self.f_net = f_net
        self.h_net = h_net
        self.dt = dt
        self.lam = lam

    def f(self, x, u) -> ad.Var:
        xv = x if isinstance(x, ad.Var) else ad.constant(np.atleast_2d(x))
        uv = u if isinstance(u, ad.Var) else ad.constant(np.atleast_2d(u))
        return self.f_net(ad.concat([xv, uv], axis=1))

    def h(self, x) -> ad.Var:
        xv = x if isinstance(x, ad.Var) else ad.constant(np.atleast_2d(x))
        return self.h_net(xv)

    def kl_sum(self) -> ad.Var | None:
        return None

    def params(self):
        return self.f_net.params("f") + self.h_net.params("h")


def euler_step(model, x_n, u_n) -> np.ndarray:
    """x_{n+1} = x_n + f(x_n, u_n) * dt on plain vectors."""
    x = np.atleast_2d(np.asarray(x_n, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u_n, dtype=np.float64))
    nxt = x + model.f(x, u).value * model.dt
    return nxt[0] if np.ndim(x_n) == 1 else nxt


def rollout_states(model, x0, inputs) -> np.ndarray:
    """Euler trajectory (N+1, d) from x0 under an (N, du) input sequence."""
    x = np.asarray(x0, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs.reshape(-1, 1)
    states = [x]
    for n in range(len(inputs)):
        x = euler_step(model, x, inputs[n])
        states.append(x)
    return np.stack(states)


def physics_loss(model, states, inputs, eps_map=None) -> float:
    """Mean squared Euler residual over steps and state components.

    residual_n = (x_{n+1} - x_n)/dt - f(x_n, u_n), n = 0..N-2; the mean runs
    over both the N-1 residual rows and the d components.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 2:
        raise ValueError("need at least two states")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs.reshape(-1, 1)
    x_now = states[:-1]
    u_now = inputs[: len(x_now)]
    if isinstance(model, BattNN):
        f_val = model.f(x_now, u_now, eps_map=eps_map).value
    else:
        f_val = model.f(x_now, u_now).value
    resid = (states[1:] - x_now) / model.dt - f_val
    return float(np.mean(resid**2))


def total_loss(model, profile, beta: float = 0.0, x0=None, eps_map=None) -> float:
    """Data MSE + lam * physics residual + beta * summed subnet KL.

    The physics term is evaluated on the model's own Euler rollout, where
    it vanishes up to round-off by construction; it is assembled anyway so
    the objective reads as stated.
    """
    out, states = rollout_with_states(model, profile, x0=x0, eps_map=eps_map)
    data = float(np.mean((out - profile.voltage) ** 2))
    phys = physics_loss(model, states, profile.current.reshape(-1, 1), eps_map=eps_map)
    kl = model.kl_sum()
    kl_val = 0.0 if kl is None else kl.item()
    return data + model.lam * phys + beta * kl_val


def rollout_with_states(model, profile, x0=None, eps_map=None):
    """Per-step outputs plus the visited states for one profile (plain arrays)."""
    if isinstance(model, BattNN):
        out, states, _ = model.rollout(profile.current.reshape(1, -1), profile.dt,
                                       x0=x0, eps_map=eps_map, collect=True)
        return out.value[0], np.stack([s.value[0] for s in states])
    u = profile.current.reshape(-1, 1)
    if x0 is None:
        x0 = np.zeros(model.f_net.layers[0].in_dim - u.shape[1])
    x = np.asarray(x0, dtype=np.float64)
    states, outs = [x], []
    for n in range(len(u)):
        outs.append(model.h(x).value[0])
        x = euler_step(model, x, u[n])
        states.append(x)
    return np.array(outs).squeeze(-1), np.stack(states)


@dataclass(frozen=True)
class EcmConstants:
    """Capacitance/resistance analogues of the simplified circuit."""

    c_b: float = 400.0  # bulk capacity, charge units
    c_sp: float = 30.0  # surface-overpotential capacitance
    c_s: float = 60.0  # diffusion capacitance
    r_s: float = 0.08  # series resistance

    def __post_init__(self):
        for name in ("c_b", "c_sp", "c_s", "r_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def full_charge(self) -> np.ndarray:
        return np.array([self.c_b, 0.0, 0.0])


@dataclass(frozen=True)
class DischargeProfile:
    """One discharge: uniform timestamps, applied current, measured voltage."""

    t: np.ndarray
    current: np.ndarray
    voltage: np.ndarray

    def __post_init__(self):
        t, i, v = (np.asarray(a, dtype=np.float64) for a in (self.t, self.current, self.voltage))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "current", i)
        object.__setattr__(self, "voltage", v)
        if not (len(t) == len(i) == len(v)) or len(t) < 2:
            raise ValueError("profile arrays must share a length >= 2")
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("non-uniform timestamps")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def __len__(self):
        return len(self.t)


class BattNN:
    """Three subnets embedded in the simplified circuit; each ends variationally.

    soc_net: q_b -> SOC in [0,1] (sigmoid); vb_net: (q_b, SOC) -> V_b;
    rsp_net: SOC -> 1/R_sp > 0 (softplus).
    """

    def __init__(self, soc_net: VariationalRegressor, vb_net: VariationalRegressor,
                 rsp_net: VariationalRegressor, consts: EcmConstants, dt: float,
                 lam: float = 1.0):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.soc_net = soc_net
        self.vb_net = vb_net
        self.rsp_net = rsp_net
        self.consts = consts
        self.dt = dt
        self.lam = lam

    @classmethod
    def init(cls, stream: RngStream, consts: EcmConstants = EcmConstants(), dt: float = 2.0,
             lam: float = 1.0, prior_sigma: float = 1.0, vb_bias: float = 3.7,
             rsp_init: float = 3.0) -> "BattNN":
        """Fresh subnets with physically sensible output starting points.

        vb's output bias starts at the cell's nominal voltage and the rsp
        head starts at conductance `rsp_init`, so the surface element's
        initial relaxation time is a few steps rather than a few minutes;
        both matter for how quickly the rollout's shape terms train.
        """
        soc = make_dense_regressor(1, [4, 4], 1, stream.derive(1), squash="sigmoid",
                                   prior_sigma=prior_sigma)
        vb = make_dense_regressor(2, [8, 8, 8], 1, stream.derive(2), prior_sigma=prior_sigma)
        vb.head.mu.value[-1] = vb_bias
        rsp = make_dense_regressor(1, [8, 8, 4], 1, stream.derive(3), squash="softplus",
                                   prior_sigma=prior_sigma)
        rsp.head.mu.value[-1] = softplus_inv(rsp_init)
        return cls(soc, vb, rsp, consts, dt, lam)

    def _subnets(self):
        return {"soc": self.soc_net, "vb": self.vb_net, "rsp": self.rsp_net}

    def draw_eps(self, stream: RngStream) -> dict:
        return {name: net.draw_eps(stream.derive(k))
                for k, (name, net) in enumerate(self._subnets().items())}

    # subnet inputs are normalised by the bulk capacity so the networks see
    # O(1) values regardless of the cell's charge units

    def soc_of(self, q_b, eps=None) -> ad.Var:
        return self.soc_net.forward(q_b * (1.0 / self.consts.c_b), eps)

    def vb_of(self, q_b, soc, eps=None) -> ad.Var:
        scaled = q_b * (1.0 / self.consts.c_b)
        return self.vb_net.forward(_cat([scaled, soc]), eps)

    def rsp_inv_of(self, soc, eps=None) -> ad.Var:
        return self.rsp_net.forward(soc, eps)

    def component_fns(self):
        """The (soc, vb, rsp_inv) maps as plain-array functions of raw charge.

        These are exactly what the rollout evaluates, so a reference circuit
        simulation driven by them reproduces the model's voltages.
        """
        return (
            lambda q_b: self.soc_of(ad.constant(q_b)).value,
            lambda q_b_soc: self.vb_of(ad.constant(q_b_soc[:, 0:1]),
                                       ad.constant(q_b_soc[:, 1:2])).value,
            lambda soc: self.rsp_inv_of(ad.constant(soc)).value,
        )

    def f(self, x, u, eps_map=None) -> ad.Var:
        """State derivative (B, 3) for stacked states (B, 3) and currents (B, 1)."""
        xv = x if isinstance(x, ad.Var) else ad.constant(np.atleast_2d(np.asarray(x, float)))
        uv = u if isinstance(u, ad.Var) else ad.constant(np.atleast_2d(np.asarray(u, float)))
        eps_map = eps_map or {}
        q_b, q_sp, q_s = _col(xv, 0), _col(xv, 1), _col(xv, 2)
        soc = self.soc_of(q_b, eps_map.get("soc"))
        rsp_inv = self.rsp_inv_of(soc, eps_map.get("rsp"))
        c = self.consts
        f_qb = -uv
        f_qsp = uv - q_sp * rsp_inv * (1.0 / c.c_sp)
        f_qs = uv - q_s * (1.0 / (c.r_s * c.c_s))
        return ad.concat([f_qb, f_qsp, f_qs], axis=1)

    def h(self, x, u, eps_map=None) -> ad.Var:
        """Terminal voltage V = V_b - i*R_s - q_sp/C_sp."""
        xv = x if isinstance(x, ad.Var) else ad.constant(np.atleast_2d(np.asarray(x, float)))
        uv = u if isinstance(u, ad.Var) else ad.constant(np.atleast_2d(np.asarray(u, float)))
        eps_map = eps_map or {}
        q_b, q_sp = _col(xv, 0), _col(xv, 1)
        soc = self.soc_of(q_b, eps_map.get("soc"))
        v_b = self.vb_of(q_b, soc, eps_map.get("vb"))
        c = self.consts
        return v_b - uv * c.r_s - q_sp * (1.0 / c.c_sp)

    def rollout(self, currents: np.ndarray, dt: float | None = None, x0=None,
                eps_map=None, collect: bool = False):
        """Voltages for a (B, T) current batch; optionally states and f values."""
        currents = np.atleast_2d(np.asarray(currents, dtype=np.float64))
        B, T = currents.shape
        dt = self.dt if dt is None else dt
        if x0 is None:
            x0 = self.consts.full_charge()
        x0 = np.asarray(x0, dtype=np.float64)
        x = ad.constant(np.tile(x0, (B, 1)) if x0.ndim == 1 else x0)
        eps_map = eps_map or {}
        outs, states, fs = [], [x], []
        for n in range(T):
            u = ad.constant(currents[:, n : n + 1])
            outs.append(self.h(x, u, eps_map))
            f_val = self.f(x, u, eps_map)
            fs.append(f_val)
            x = ad.add(x, ad.mul(f_val, dt))
            states.append(x)
        voltages = ad.concat(outs, axis=1)
        if collect:
            return voltages, states, fs
        return voltages

    def predict(self, currents, stream: RngStream | None = None, dt=None, x0=None) -> np.ndarray:
        eps_map = None if stream is None else self.draw_eps(stream)
        return self.rollout(currents, dt=dt, x0=x0, eps_map=eps_map).value

    def kl_sum(self) -> ad.Var:
        nets = self._subnets().values()
        total = None
        for net in nets:
            term = net.kl()
            total = term if total is None else ad.add(total, term)
        return total

    def batch_loss(self, profiles, idx, stream: RngStream, config) -> ad.Var:
        """Eq-22-style objective on a batch of equal-length profiles.

        The physics residual is assembled from the rollout's own states and
        f evaluations (where it is zero to round-off), so the trained
        objective reads data + lam*physics + beta*KL.
        """
        batch = [profiles[int(i)] for i in np.atleast_1d(idx)]
        T = len(batch[0])
        if any(len(p) != T for p in batch):
            raise ValueError("profiles in one batch must share a length")
        currents = np.stack([p.current for p in batch])
        targets = np.stack([p.voltage for p in batch])
        eps_map = self.draw_eps(stream)
        out, states, fs = self.rollout(currents, eps_map=eps_map, collect=True)
        loss = ad.mean_squared_error(out, ad.constant(targets))
        if self.lam > 0:
            resid_terms = []
            inv_dt = 1.0 / self.dt
            for n in range(len(fs)):
                delta = ad.mul(ad.sub(states[n + 1], states[n]), inv_dt)
                resid_terms.append(ad.square(ad.sub(delta, fs[n])))
            phys = ad.mean(ad.concat(resid_terms, axis=1))
            loss = ad.add(loss, ad.mul(phys, self.lam))
        if config.beta > 0:
            loss = ad.add(loss, ad.mul(self.kl_sum(), config.beta))
        return loss

    def params(self):
        out = []
        for name, net in self._subnets().items():
            for pname, var, decay in net.params():
                out.append((f"{name}.{pname}", var, decay))
        return out

    def param_dict(self):
        return {name: var for name, var, _ in self.params()}


def battnn_forward(model: BattNN, currents, dt: float | None = None, x0=None) -> np.ndarray:
    """Posterior-mean voltage sequence for one current profile."""
    currents = np.asarray(currents, dtype=np.float64)
    out = model.predict(currents.reshape(1, -1), dt=dt, x0=x0)
    return out[0]


def simulate_voltages(currents, dt, consts: EcmConstants, soc_fn, vb_fn, rsp_inv_fn,
                      x0=None):
    """Reference circuit simulation with caller-supplied component functions.

    Same equations and update order as BattNN.rollout; the functions take and
    return (n, 1) arrays. Used by the synthetic generator, and by tests to
    confirm the model reproduces a cell built from its own subnets.
    """
    currents = np.asarray(currents, dtype=np.float64).reshape(-1)
    x = (consts.full_charge() if x0 is None else np.asarray(x0, float)).reshape(1, 3).copy()
    volts = np.empty(len(currents))
    for n, i_t in enumerate(currents):
        q_b, q_sp, q_s = x[:, 0:1], x[:, 1:2], x[:, 2:3]
        u = np.array([[i_t]])
        soc = soc_fn(q_b)
        v_b = vb_fn(np.concatenate([q_b, soc], axis=1))
        volts[n] = (v_b - u * consts.r_s - q_sp * (1.0 / consts.c_sp))[0, 0]
        rsp_inv = rsp_inv_fn(soc)
        f_qb = -u
        f_qsp = u - q_sp * rsp_inv * (1.0 / consts.c_sp)
        f_qs = u - q_s * (1.0 / (consts.r_s * consts.c_s))
        x = x + np.concatenate([f_qb, f_qsp, f_qs], axis=1) * dt
    return volts

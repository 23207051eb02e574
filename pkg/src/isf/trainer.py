"""Alternating critic/mapper optimization against a frozen generator."""

import base64
import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, asdict, field, fields, replace

import torch

from . import objectives as obj
from .critic import Critic
from .errors import InvalidArgument, InvalidCheckpoint, NumericError, TrainingAborted
from .isf_net import ISFDims, init_params
from .serialization import save_tensors, load_tensors, load_module_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    total_iterations: int = 3000
    batch_size: int = 16
    learning_rate_M: float = 1e-3
    learning_rate_D: float = 1e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    r1_gamma: float = 1.0
    weights: obj.LossWeights = field(default_factory=obj.LossWeights)
    ds_decay_iterations: int = None
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 1
    noise_dim: int = 32
    hidden: int = 256
    f1_depth: int = 2
    f2_depth: int = 2
    norm: str = "layer"
    critic_width: int = 32
    critic_input_resolution: int = None

    def __post_init__(self):
        if self.total_iterations < 0:
            raise InvalidArgument("total_iterations must be >= 0")
        for name in ("batch_size", "noise_dim", "hidden", "critic_width", "log_every"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        for name in ("learning_rate_M", "learning_rate_D", "r1_gamma", "adam_eps"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise InvalidArgument("Adam betas must lie in [0, 1)")
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", obj.LossWeights(**self.weights))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def as_dict(self):
        return asdict(self)

    def digest(self):
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def ds_horizon(self):
        return self.ds_decay_iterations or max(self.total_iterations, 1)


@dataclass
class Checkpoint:
    iteration: int
    mapper: dict
    critic: dict
    optim_M: dict
    optim_D: dict
    rng_state: torch.Tensor
    config: dict
    config_digest: str
    generator_digest: str
    dims: dict


class TrainState:
    """Mutable training state owned by a single training stream."""

    def __init__(self, config, handles):
        self.config = config
        self.handles = handles
        gen = handles.generator
        L, C = gen.latent_shape
        self.dims = ISFDims(L=L, C=C, m=handles.classifier.num_attributes, n=config.noise_dim,
                            hidden=config.hidden, f1_depth=config.f1_depth,
                            f2_depth=config.f2_depth, norm=config.norm)
        self.rng = torch.Generator().manual_seed(config.seed)
        self.mapper = init_params(self.dims, self.rng)
        res = gen.resolution[0]
        self.critic = Critic(self.dims.m, resolution=config.critic_input_resolution or res,
                             width=config.critic_width, input_resolution=res)
        self._init_critic()
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_M = torch.optim.Adam(self.mapper.parameters(), lr=config.learning_rate_M,
                                      betas=betas, eps=config.adam_eps)
        self.opt_D = torch.optim.Adam(self.critic.parameters(), lr=config.learning_rate_D,
                                      betas=betas, eps=config.adam_eps)
        self.iteration = 0
        self.generator_digest = gen.digest()

    def _init_critic(self):
        with torch.no_grad():
            for mod in self.critic.modules():
                if isinstance(mod, (torch.nn.Conv2d, torch.nn.Linear)):
                    fan_in = mod.weight[0].numel()
                    bound = (6.0 / fan_in) ** 0.5
                    mod.weight.uniform_(-bound, bound, generator=self.rng)
                    mod.bias.zero_()

    def checkpoint(self):
        return Checkpoint(
            iteration=self.iteration,
            mapper={k: v.clone() for k, v in self.mapper.state_dict().items()},
            critic={k: v.clone() for k, v in self.critic.state_dict().items()},
            optim_M=_optim_tensors(self.opt_M),
            optim_D=_optim_tensors(self.opt_D),
            rng_state=self.rng.get_state().clone(),
            config=self.config.as_dict(),
            config_digest=self.config.digest(),
            generator_digest=self.generator_digest,
            dims=self.dims.as_dict())

    def restore(self, ckpt):
        if ckpt.generator_digest != self.generator_digest:
            raise InvalidCheckpoint("checkpoint was produced with a different generator")
        if ckpt.dims != self.dims.as_dict():
            raise InvalidCheckpoint("checkpoint network dims do not match config")
        load_module_state(self.mapper, ckpt.mapper)
        load_module_state(self.critic, ckpt.critic)
        _load_optim(self.opt_M, ckpt.optim_M)
        _load_optim(self.opt_D, ckpt.optim_D)
        self.rng.set_state(ckpt.rng_state)
        self.iteration = ckpt.iteration


def _optim_tensors(opt):
    out = {}
    for i, p in enumerate(opt.param_groups[0]["params"]):
        st = opt.state.get(p)
        if st:
            out[f"{i}.exp_avg"] = st["exp_avg"].clone()
            out[f"{i}.exp_avg_sq"] = st["exp_avg_sq"].clone()
            out[f"{i}.step"] = st["step"].clone().reshape(1)
    return out


def _load_optim(opt, tensors):
    opt.state.clear()
    for i, p in enumerate(opt.param_groups[0]["params"]):
        if f"{i}.exp_avg" in tensors:
            opt.state[p] = {"step": tensors[f"{i}.step"].reshape(()).clone(),
                            "exp_avg": tensors[f"{i}.exp_avg"].clone(),
                            "exp_avg_sq": tensors[f"{i}.exp_avg_sq"].clone()}


def sample_targets(d0, rng):
    """Flip each binarized attribute of ``d0`` with probability 1/2, never none."""
    base = (d0 > 0.5).to(d0.dtype)
    flips = torch.rand(base.shape, generator=rng) < 0.5
    bad = ~flips.any(dim=-1)
    while bad.any():
        redraw = torch.rand((int(bad.sum()), base.shape[-1]), generator=rng) < 0.5
        flips[bad] = redraw
        bad = ~flips.any(dim=-1)
    return torch.where(flips, 1 - base, base)


def _sample_batch(dataset_codes, dataset_labels, batch_size, rng):
    idx = torch.randint(len(dataset_codes), (batch_size,), generator=rng)
    return dataset_codes[idx], dataset_labels[idx]


def train_step(batch, state, real_sampler=None):
    """One critic update followed by one mapper update; returns a LossReport.

    ``real_sampler(w, rng)`` may supply external real images; by default the
    real branch is ``G(w)`` of the unmanipulated codes.
    """
    w, d0 = batch
    cfg, lam = state.config, state.config.weights
    G, M, D = state.handles.generator, state.mapper, state.critic
    perceptual = state.handles.perceptual
    rng, n = state.rng, state.dims.n
    B = w.shape[0]

    d = sample_targets(d0, rng)
    z = torch.randn((B, n), generator=rng)
    z2 = torch.randn((B, n), generator=rng)
    z3 = torch.randn((B, n), generator=rng)
    rep = obj.LossReport()

    # critic update
    D.requires_grad_(True)
    with torch.no_grad():
        x_src = G(w)
        x_fake = G(M(w, z, d))
    real = (real_sampler(w, rng) if real_sampler else x_src).detach().requires_grad_(True)
    real_logit, real_cls = D(real)
    fake_logit = D.discriminate(x_fake)
    L_rf_D = _term(rep, "L_rf_D", state.iteration, obj.adv_loss_critic,
                   real_logit, fake_logit, real, cfg.r1_gamma)
    L_cls_D = _term(rep, "L_cls_D", state.iteration, obj.cls_loss_critic,
                    D.classify_logits(x_src) if real_sampler else real_cls, d0)
    total_D = lam.lambda_rf * L_rf_D + lam.lambda_cls * L_cls_D
    rep.L_rf_D, rep.L_cls_D, rep.total_D = L_rf_D.item(), L_cls_D.item(), total_D.item()
    _abort_if_bad(rep, ("L_rf_D", "L_cls_D", "total_D"), state.iteration)
    state.opt_D.zero_grad(set_to_none=True)
    total_D.backward()
    state.opt_D.step()

    # mapper update
    D.requires_grad_(False)
    w_star = M(w, z, d)
    x_star = G(w_star)
    fake_logit, fake_cls = D(x_star)
    x_div = G(M(w, z2, d))
    x_cyc = G(M(w_star, z3, d0))
    it = state.iteration
    terms = {
        "L_rf_M": _term(rep, "L_rf_M", it, obj.adv_loss_mapper, fake_logit),
        "L_cls_M": _term(rep, "L_cls_M", it, obj.cls_loss_mapper, fake_cls, d),
        "L_cont": _term(rep, "L_cont", it, obj.content_loss, x_src, x_star, perceptual),
        "L_nb": _term(rep, "L_nb", it, obj.neighbour_loss, w, w_star),
        "L_cyc": _term(rep, "L_cyc", it, obj.cycle_loss, x_src, x_cyc),
        "L_ds": _term(rep, "L_ds", it, obj.diversity_loss, x_star, x_div),
    }
    for k, v in terms.items():
        setattr(rep, k, v.item())
    rep.ds_weight = obj.ds_weight(min(state.iteration, cfg.ds_horizon), cfg.ds_horizon,
                                  lam.lambda_ds)
    _abort_if_bad(rep, tuple(terms), state.iteration)
    total_M = obj.total_mapper_objective(terms, lam, min(state.iteration, cfg.ds_horizon),
                                         cfg.ds_horizon)
    rep.total_M = total_M.item()
    _abort_if_bad(rep, ("total_M",), state.iteration)
    state.opt_M.zero_grad(set_to_none=True)
    total_M.backward()
    state.opt_M.step()
    D.requires_grad_(True)

    state.iteration += 1
    return state, rep


def _term(rep, name, iteration, fn, *args):
    try:
        return fn(*args)
    except NumericError as exc:
        setattr(rep, name, float("nan"))
        raise TrainingAborted(f"non-finite loss at iteration {iteration}: {name} ({exc})",
                              report=rep.record(iteration)) from exc


def _abort_if_bad(rep, keys, iteration):
    bad = [k for k in rep.non_finite() if k in keys]
    if bad:
        raise TrainingAborted(f"non-finite loss at iteration {iteration}: {', '.join(bad)}",
                              report=rep.record(iteration))


class Trainer:
    """Drives ``train_step`` over a dataset, logging and checkpointing."""

    def __init__(self, config, handles, dataset, out_dir=None, real_sampler=None):
        if len(dataset) == 0:
            raise InvalidArgument("dataset is empty")
        self.config = config
        self.state = TrainState(config, handles)
        self.codes, self.labels = dataset.split("train")
        if len(self.codes) == 0:
            raise InvalidArgument("training split is empty")
        self.out_dir = out_dir
        self.real_sampler = real_sampler
        self.reports = []

    def resume(self, ckpt):
        self.state.restore(ckpt)
        return self

    def step(self):
        batch = _sample_batch(self.codes, self.labels, self.config.batch_size, self.state.rng)
        it = self.state.iteration
        _, rep = train_step(batch, self.state, self.real_sampler)
        self.reports.append(rep.record(it))
        return rep

    def run(self, iterations=None):
        cfg = self.config
        stop = cfg.total_iterations if iterations is None else self.state.iteration + iterations
        log_fh = None
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            log_fh = open(os.path.join(self.out_dir, "train_log.jsonl"), "a")
        try:
            while self.state.iteration < stop:
                it = self.state.iteration
                rep = self.step()
                if log_fh and it % cfg.log_every == 0:
                    log_fh.write(json.dumps(rep.record(it)) + "\n")
                if it % 500 == 0:
                    log.info("iter %d total_M %.4f total_D %.4f", it, rep.total_M, rep.total_D)
                if (self.out_dir and cfg.checkpoint_every
                        and self.state.iteration % cfg.checkpoint_every == 0):
                    save_checkpoint(self.state.checkpoint(), self.checkpoint_dir(self.state.iteration))
        finally:
            if log_fh:
                log_fh.close()
        ckpt = self.state.checkpoint()
        if self.out_dir:
            save_checkpoint(ckpt, os.path.join(self.out_dir, "checkpoint_final"))
        return ckpt

    def checkpoint_dir(self, iteration):
        return os.path.join(self.out_dir, f"checkpoint_{iteration:07d}")


def run(config, dataset, handles, out_dir=None, resume_from=None):
    trainer = Trainer(config, handles, dataset, out_dir)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.run()


def save_checkpoint(ckpt, directory):
    """Write a checkpoint directory atomically (tmp dir + rename)."""
    tmp = directory.rstrip("/") + ".tmp"
    shutil.rmtree(tmp, ignore_errors=True)
    try:
        os.makedirs(tmp)
        save_tensors(os.path.join(tmp, "mapper"), ckpt.mapper)
        save_tensors(os.path.join(tmp, "critic"), ckpt.critic)
        save_tensors(os.path.join(tmp, "optim_M"), ckpt.optim_M)
        save_tensors(os.path.join(tmp, "optim_D"), ckpt.optim_D)
        manifest = {
            "format_version": 1,
            "iteration": ckpt.iteration,
            "rng_state": base64.b64encode(ckpt.rng_state.numpy().tobytes()).decode(),
            "config": ckpt.config,
            "config_digest": ckpt.config_digest,
            "generator_digest": ckpt.generator_digest,
            "dims": ckpt.dims,
        }
        with open(os.path.join(tmp, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)
        shutil.rmtree(directory, ignore_errors=True)
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return directory


def load_checkpoint(directory):
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
    except (OSError, ValueError) as exc:
        raise InvalidCheckpoint(f"cannot read checkpoint manifest in {directory}: {exc}") from exc
    rng = torch.frombuffer(bytearray(base64.b64decode(man["rng_state"])), dtype=torch.uint8)
    return Checkpoint(
        iteration=man["iteration"],
        mapper=load_tensors(os.path.join(directory, "mapper")),
        critic=load_tensors(os.path.join(directory, "critic")),
        optim_M=load_tensors(os.path.join(directory, "optim_M")),
        optim_D=load_tensors(os.path.join(directory, "optim_D")),
        rng_state=rng.clone(),
        config=man["config"],
        config_digest=man["config_digest"],
        generator_digest=man.get("generator_digest"),
        dims=man["dims"])


def mapper_from_checkpoint(ckpt):
    mapper = init_params(ISFDims(**ckpt.dims), 0)
    load_module_state(mapper, ckpt.mapper)
    mapper.eval()
    return mapper


def verify_frozen(generator, checkpoint_a, checkpoint_b):
    """True iff both checkpoints (and the live handle, if given) share one generator digest."""
    da = getattr(checkpoint_a, "generator_digest", None)
    db = getattr(checkpoint_b, "generator_digest", None)
    if not da or not db:
        raise InvalidCheckpoint("checkpoint lacks a generator digest")
    if generator is not None and generator.digest() != da:
        return False
    return da == db


def config_with(config, **changes):
    return replace(config, **changes)

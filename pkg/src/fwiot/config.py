"""INI experiment configuration: parsing, validation, model building.

Sections: [grid], [time], [model], [truth], [acquisition], [wavelet], [sim],
[misfit], [normalization], [optimizer], [ma], [output], plus per-command
sections [sensitivity], [noise], [tomo], [lsrtm]. All units SI. Values are
validated against the module invariants before any compute; errors name the
offending section and key.
"""

from __future__ import annotations

import configparser

import numpy as np

from .errors import ConfigError, ValidationError
from .fileio import read_grid_file
from .grids import Acquisition, Grid2D, SourceWavelet, TimeAxis, VelocityModel
from .misfit import KINDS, MisfitKind
from .mongeampere import MaParams
from .normalize import Normalization
from .optimize import LbfgsConfig
from .wavesim import SimConfig


class ExperimentConfig:
    """Thin typed reader over configparser with section/key error reporting."""

    def __init__(self, parser: configparser.ConfigParser, path: str):
        self._p = parser
        self.path = path

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            read = parser.read(path)
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from err
        if not read:
            raise ConfigError(f"config file not found: {path}")
        return cls(parser, str(path))

    def has(self, section: str) -> bool:
        return self._p.has_section(section)

    def _get(self, section: str, key: str, default=None, required=False):
        if not self._p.has_section(section):
            if required:
                raise ConfigError(f"{self.path}: missing [{section}] section")
            return default
        if not self._p.has_option(section, key):
            if required:
                raise ConfigError(f"{self.path}: missing key '{key}' in [{section}]")
            return default
        return self._p.get(section, key)

    def str_(self, section, key, default=None, required=False):
        v = self._get(section, key, default, required)
        return v if v is None else str(v).strip()

    def float_(self, section, key, default=None, required=False):
        v = self._get(section, key, default, required)
        if v is None or v == "auto":
            return None if v == "auto" else default
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.path}: [{section}] {key} = {v!r} is not a number")

    def int_(self, section, key, default=None, required=False):
        v = self._get(section, key, default, required)
        if v is None:
            return default
        try:
            return int(str(v))
        except (TypeError, ValueError):
            raise ConfigError(f"{self.path}: [{section}] {key} = {v!r} is not an integer")

    def bool_(self, section, key, default=False):
        v = self._get(section, key, None)
        if v is None:
            return default
        s = str(v).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.path}: [{section}] {key} = {v!r} is not a boolean")

    # ---- builders ----------------------------------------------------------

    def grid(self) -> Grid2D:
        try:
            return Grid2D(
                nx=self.int_("grid", "nx", required=True),
                nz=self.int_("grid", "nz", required=True),
                dx=self.float_("grid", "dx", required=True),
                dz=self.float_("grid", "dz", required=True),
                origin=(self.float_("grid", "x0", 0.0), self.float_("grid", "z0", 0.0)),
            )
        except ValidationError as err:
            raise ConfigError(f"{self.path}: [grid] {err}") from err

    def time_axis(self) -> TimeAxis:
        try:
            return TimeAxis(self.int_("time", "nt", required=True),
                            self.float_("time", "dt", required=True))
        except ValidationError as err:
            raise ConfigError(f"{self.path}: [time] {err}") from err

    def model(self, section: str = "model") -> VelocityModel:
        grid = self.grid()
        kind = self.str_(section, "kind", "homogeneous")
        vmin = self.float_(section, "vmin", 300.0)
        vmax = self.float_(section, "vmax", 8000.0)
        try:
            if kind == "homogeneous":
                c = np.full(grid.shape, self.float_(section, "velocity", required=True))
            elif kind == "gaussian_lens":
                c0 = self.float_(section, "velocity", required=True)
                cx = self.float_(section, "lens_center_x", required=True)
                cz = self.float_(section, "lens_center_z", required=True)
                sig = self.float_(section, "lens_sigma", required=True)
                amp = self.float_(section, "lens_amplitude", required=True)
                x = grid.x_coords()[None, :]
                z = grid.z_coords()[:, None]
                c = c0 * (1.0 + amp * np.exp(-((x - cx) ** 2 + (z - cz) ** 2) / (2 * sig**2)))
            elif kind == "file":
                model = read_grid_file(self.str_(section, "file", required=True), vmin=vmin, vmax=vmax)
                if model.grid != grid:
                    raise ConfigError(f"{self.path}: [{section}] file grid does not match [grid]")
                return model
            else:
                raise ConfigError(f"{self.path}: [{section}] unknown model kind {kind!r}")
            return VelocityModel.from_velocity(grid, c, vmin=vmin, vmax=vmax)
        except ValidationError as err:
            raise ConfigError(f"{self.path}: [{section}] {err}") from err

    def _positions(self, section, prefix) -> tuple[tuple[float, float], ...]:
        explicit = self.str_(section, prefix + "s", None)
        if explicit:
            pts = []
            for chunk in explicit.split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                try:
                    xs, zs = chunk.split(",")
                    pts.append((float(xs), float(zs)))
                except ValueError:
                    raise ConfigError(f"{self.path}: [{section}] bad position entry {chunk!r}")
            return tuple(pts)
        count = self.int_(section, prefix + "_count", required=True)
        depth = self.float_(section, prefix + "_z", required=True)
        x0 = self.float_(section, prefix + "_x0", required=True)
        x1 = self.float_(section, prefix + "_x1", required=True)
        if count == 1:
            return ((0.5 * (x0 + x1), depth),)
        return tuple((x0 + (x1 - x0) * i / (count - 1), depth) for i in range(count))

    def acquisition(self) -> Acquisition:
        try:
            wavelet = SourceWavelet(
                peak_frequency=self.float_("wavelet", "peak_frequency", required=True),
                delay=self.float_("wavelet", "delay", 0.0),
                highpass_cut=self.float_("wavelet", "highpass_cut", 0.0),
                amplitude=self.float_("wavelet", "amplitude", 1.0),
            )
            acq = Acquisition(self._positions("acquisition", "source"),
                              self._positions("acquisition", "receiver"), wavelet)
            acq.validate_against(self.grid())
            return acq
        except ValidationError as err:
            raise ConfigError(f"{self.path}: [acquisition] {err}") from err

    def sim_config(self) -> SimConfig:
        try:
            return SimConfig(
                spatial_order=self.int_("sim", "spatial_order", 4),
                sponge_width=self.int_("sim", "sponge_width", 30),
                sponge_strength=self.float_("sim", "sponge_strength", 4.6),
                cfl_safety=self.float_("sim", "cfl_safety", 0.9),
                free_surface=self.bool_("sim", "free_surface", False),
            )
        except ValidationError as err:
            raise ConfigError(f"{self.path}: [sim] {err}") from err

    def normalization(self, override_section: str | None = None) -> Normalization:
        """Global [normalization], optionally overridden by a per-command key.

        A command section may carry its own 'normalization_kind' (plus
        'normalization_c'); the sensitivity and noise experiments typically
        want different scalings.
        """
        kind = self.str_("normalization", "kind", "linear")
        c = self.float_("normalization", "c", None)
        floor = self.float_("normalization", "floor", 1e-8)
        if override_section is not None:
            kind = self.str_(override_section, "normalization_kind", kind)
            c = self.float_(override_section, "normalization_c", c)
        try:
            return Normalization(kind=kind, c=c, floor=floor)
        except (ValidationError, ValueError) as err:
            raise ConfigError(f"{self.path}: [normalization] {err}") from err

    def ma_params(self) -> MaParams:
        try:
            return MaParams(
                delta=self.float_("ma", "delta", None),
                epsilon_filter=self.float_("ma", "epsilon", None),
                newton_tol=self.float_("ma", "newton_tol", 1e-8),
                max_newton=self.int_("ma", "max_newton", 60),
                damping=self.float_("ma", "damping", 0.5),
            )
        except ValidationError as err:
            raise ConfigError(f"{self.path}: [ma] {err}") from err

    def misfit_kind(self) -> MisfitKind:
        kind = self.str_("misfit", "kind", "l2")
        if kind not in KINDS:
            raise ConfigError(f"{self.path}: [misfit] kind must be one of {KINDS}, got {kind!r}")
        return MisfitKind(
            kind=kind,
            normalization=self.normalization(),
            ma_params=self.ma_params(),
            smooth_sigma=self.float_("misfit", "smooth_sigma", 1.0),
            ma_grid_n=self.int_("misfit", "ma_grid_n", 64),
            fallback_to_trace=self.bool_("misfit", "fallback_to_trace", False),
            per_trace_normalization=self.bool_("misfit", "per_trace_normalization", False),
        )

    def lbfgs_config(self) -> LbfgsConfig:
        try:
            return LbfgsConfig(
                memory=self.int_("optimizer", "memory", 10),
                max_iters=self.int_("optimizer", "max_iters", 60),
                grad_tol=self.float_("optimizer", "grad_tol", 0.0),
                initial_step=self.float_("optimizer", "initial_step", None),
            )
        except ValidationError as err:
            raise ConfigError(f"{self.path}: [optimizer] {err}") from err

    def seed(self) -> int:
        return self.int_("output", "seed", 1234)

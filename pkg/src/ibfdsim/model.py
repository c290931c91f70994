"""Network geometry, propagation, and hardware model.

Builds reproducible multi-cell scenarios for an in-band full-duplex (IBFD)
deployment: base stations on a hexagonal lattice serve downlink users while
simultaneously receiving from uplink users, so every realization carries
user-to-user and BS-to-BS cross links in addition to the usual serving links,
plus a self-interference (SI) channel at each BS.

All channels are stored both as the true matrix and as an estimated copy with
a known per-element error variance; SI channels are assumed perfectly known.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields, replace

import numpy as np

# ---------------------------------------------------------------------------
# unit helpers
# ---------------------------------------------------------------------------


def dbm_to_watts(power_dbm: float) -> float:
    """Convert a dBm figure to watts."""
    return 10.0 ** (power_dbm / 10.0) * 1e-3


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def noise_variance(density_dbm_hz: float, bandwidth_hz: float, noise_figure_db: float) -> float:
    """Thermal noise power in watts over the given bandwidth, including noise figure."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth_hz must be positive")
    total_dbm = density_dbm_hz + 10.0 * math.log10(bandwidth_hz) + noise_figure_db
    return dbm_to_watts(total_dbm)


def distortion_factor_from_bits(bits: float) -> float:
    """Additive-quantization-noise-model distortion factor for a b-bit converter.

    Maps converter resolution to the relative distortion power injected at
    each antenna: (pi*sqrt(3)/2) * 4**(-b).  Returns 0 for infinite bits.
    """
    if bits <= 0:
        raise ValueError("bits must be positive")
    if math.isinf(bits):
        return 0.0
    return (math.pi * math.sqrt(3.0) / 2.0) * 4.0 ** (-bits)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical-layer scenario description (defaults follow a dense urban-micro setup)."""

    cells: int = 2
    dl_users: int = 2                      # downlink users per cell
    ul_users: int = 2                      # uplink users per cell
    bs_tx_antennas: int = 16
    bs_rx_antennas: int = 16
    ue_tx_antennas: int = 2
    ue_rx_antennas: int = 2
    dl_streams: int = 2
    ul_streams: int = 2
    inter_site_distance_m: float = 200.0
    min_bs_user_distance_m: float = 10.0
    carrier_ghz: float = 2.5
    bandwidth_hz: float = 1e7
    bs_power_dbm: float = 24.0
    ue_power_dbm: float = 23.0
    noise_density_dbm_hz: float = -174.0
    bs_noise_figure_db: float = 13.0
    ue_noise_figure_db: float = 9.0
    adc_bits: float = 12.0
    csi_error_factor: float = 1e-12        # varrho, relative CSI error power (-120 dB)
    rician_k_db: float = 10.0
    asic_db: float = 120.0                 # analog/passive SI cancellation depth l_g
    swap_los_fading: bool = False          # use the conventional LOS->Rician mapping

    def __post_init__(self):
        for name in ("cells", "dl_users", "ul_users"):
            if getattr(self, name) < (1 if name == "cells" else 0):
                raise ValueError(f"{name} out of range: {getattr(self, name)}")
        for name in ("bs_tx_antennas", "bs_rx_antennas", "ue_tx_antennas",
                     "ue_rx_antennas", "dl_streams", "ul_streams"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dl_streams > min(self.bs_tx_antennas, self.ue_rx_antennas):
            raise ValueError("dl_streams exceeds min(bs_tx_antennas, ue_rx_antennas)")
        if self.ul_streams > min(self.ue_tx_antennas, self.bs_rx_antennas):
            raise ValueError("ul_streams exceeds min(ue_tx_antennas, bs_rx_antennas)")
        if self.csi_error_factor < 0:
            raise ValueError("csi_error_factor must be >= 0")
        if not 0 < self.min_bs_user_distance_m:
            raise ValueError("min_bs_user_distance_m must be positive")


@dataclass(frozen=True)
class AntennaConfig:
    """Antenna and stream counts shared by every node of a realization."""

    bs_tx: int
    bs_rx: int
    ue_tx: int
    ue_rx: int
    dl_streams: int
    ul_streams: int

    def __post_init__(self):
        if self.dl_streams > min(self.bs_tx, self.ue_rx):
            raise ValueError("dl_streams exceeds min(bs_tx, ue_rx)")
        if self.ul_streams > min(self.ue_tx, self.bs_rx):
            raise ValueError("ul_streams exceeds min(ue_tx, bs_rx)")


@dataclass(frozen=True)
class HardwareProfile:
    """Impairment factors, noise floors, and power budgets (all linear units)."""

    kappa_bs: float          # BS transmit distortion factor
    kappa_ue: float          # UE transmit distortion factor
    beta_bs: float           # BS receive distortion factor
    beta_ue: float           # UE receive distortion factor
    noise_bs_w: float        # receiver noise power at the BS, W
    noise_ue_w: float        # receiver noise power at a UE, W
    p_bs_w: float            # per-cell downlink power budget, W
    p_ue_w: float            # per-user uplink power budget, W
    si_gain: tuple[float, ...]   # residual SI path gain l_g per cell (linear, <= 1)

    def __post_init__(self):
        for name in ("kappa_bs", "kappa_ue", "beta_bs", "beta_ue"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("noise_bs_w", "noise_ue_w", "p_bs_w", "p_ue_w"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if any(g < 0 for g in self.si_gain):
            raise ValueError("si_gain entries must be >= 0")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

# unit normals toward the 6 lattice neighbours; the cell is the Voronoi hexagon
_HEX_NORMALS = np.array(
    [[math.cos(a), math.sin(a)] for a in np.arange(6) * (math.pi / 3.0)]
)

_AXIAL_DIRS = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]


def _hex_lattice(count: int, isd: float) -> np.ndarray:
    """First `count` sites of a hexagonal lattice spiral, centre first."""
    sites = [(0, 0)]
    ring = 1
    while len(sites) < count:
        q, r = ring, 0  # start of the ring, then walk its 6 edges
        for dq, dr in (_AXIAL_DIRS[2], _AXIAL_DIRS[3], _AXIAL_DIRS[4],
                       _AXIAL_DIRS[5], _AXIAL_DIRS[0], _AXIAL_DIRS[1]):
            for _ in range(ring):
                sites.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    xy = np.empty((count, 2))
    for n, (q, r) in enumerate(sites[:count]):
        xy[n] = (isd * (q + 0.5 * r), isd * (math.sqrt(3.0) / 2.0) * r)
    return xy


def _in_hexagon(offset: np.ndarray, isd: float) -> bool:
    # inside the Voronoi cell iff no neighbour's half-plane is crossed
    return bool(np.all(_HEX_NORMALS @ offset <= isd / 2.0 + 1e-12))


@dataclass(frozen=True, eq=False)
class Topology:
    """Node placement for one scenario: BS sites plus per-cell user drops."""

    cell_count: int
    dl_counts: tuple[int, ...]         # downlink users per cell
    ul_counts: tuple[int, ...]         # uplink users per cell
    bs_xy: np.ndarray                  # (G, 2) metres
    dl_xy: tuple[np.ndarray, ...]      # per cell (K_d, 2)
    ul_xy: tuple[np.ndarray, ...]      # per cell (K_u, 2)
    inter_site_distance_m: float
    min_bs_user_distance_m: float


def generate_topology(cells: int, dl_users: int, ul_users: int,
                      isd: float, min_dist: float, rng: np.random.Generator) -> Topology:
    """Drop BSs on a hex lattice and users uniformly inside their serving cell.

    Users are rejection-sampled inside the Voronoi hexagon of their BS with a
    keep-out disc of `min_dist` around the BS.
    """
    circumradius = isd / math.sqrt(3.0)
    if min_dist >= circumradius:
        raise ValueError(
            f"infeasible geometry: min_dist {min_dist} m >= cell radius {circumradius:.3f} m")
    bs_xy = _hex_lattice(cells, isd)

    def drop(count: int) -> np.ndarray:
        out = np.empty((count, 2))
        for n in range(count):
            for _ in range(100000):
                p = rng.uniform(-circumradius, circumradius, size=2)
                if np.hypot(*p) >= min_dist and _in_hexagon(p, isd):
                    out[n] = p
                    break
            else:  # pragma: no cover - bounded rejection region
                raise RuntimeError("user placement did not terminate")
        return out

    dl_xy, ul_xy = [], []
    for g in range(cells):
        dl_xy.append(bs_xy[g] + drop(dl_users))
        ul_xy.append(bs_xy[g] + drop(ul_users))
    return Topology(
        cell_count=cells,
        dl_counts=(dl_users,) * cells,
        ul_counts=(ul_users,) * cells,
        bs_xy=bs_xy,
        dl_xy=tuple(dl_xy),
        ul_xy=tuple(ul_xy),
        inter_site_distance_m=isd,
        min_bs_user_distance_m=min_dist,
    )


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


def los_probability(distance_m: float) -> float:
    """Line-of-sight probability of the urban-micro street-canyon model."""
    d = max(distance_m, 1e-9)
    return min(18.0 / d, 1.0) * (1.0 - math.exp(-d / 36.0)) + math.exp(-d / 36.0)


def pathloss_umi(distance_m: float, carrier_ghz: float, is_los: bool) -> float:
    """Urban-micro pathloss as a linear power gain (<= 1 in practice).

    Single-slope variants, no shadowing; distances are clamped to 1 m to keep
    the log argument sane for co-located drops.
    """
    d = max(distance_m, 1.0)  # avoid log of tiny separations
    pl_los = 32.4 + 21.0 * math.log10(d) + 20.0 * math.log10(carrier_ghz)
    if is_los:
        pl_db = pl_los
    else:
        pl_nlos = 22.4 + 35.3 * math.log10(d) + 21.3 * math.log10(carrier_ghz)
        pl_db = max(pl_los, pl_nlos)
    return db_to_linear(-pl_db)


def generate_channel(gain: float, rician_k: float, use_rician: bool,
                     rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one channel matrix with average per-element power `gain`.

    Rayleigh: sqrt(gain) * N with N i.i.d. CN(0, 1).  Rician: deterministic
    component (identity when square, all-ones otherwise) blended with the same
    scattered part at K-factor `rician_k` (linear).
    """
    scatter = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols)))
    scatter /= math.sqrt(2.0)
    if not use_rician:
        return math.sqrt(gain) * scatter
    det = np.eye(rows, cols, dtype=complex) if rows == cols else np.ones((rows, cols), dtype=complex)
    k = rician_k
    return math.sqrt(gain) * (math.sqrt(k / (k + 1.0)) * det + math.sqrt(1.0 / (k + 1.0)) * scatter)


def apply_uncertainty(channel: np.ndarray, varrho: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Split a true channel into an estimate and a known error variance.

    The per-element error variance is varrho * ||H||_F^2 / (rows*cols); the
    estimate is H minus one error draw, so estimate + error = truth holds
    exactly.  varrho = 0 returns the channel unchanged.
    """
    if varrho < 0:
        raise ValueError("varrho must be >= 0")
    if varrho == 0.0:
        return channel, 0.0
    rows, cols = channel.shape
    err_var = varrho * float(np.linalg.norm(channel) ** 2) / (rows * cols)
    delta = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols)))
    delta *= math.sqrt(err_var / 2.0)
    return channel - delta, err_var


# ---------------------------------------------------------------------------
# channel container
# ---------------------------------------------------------------------------

# node keys: ("bs", g), ("dl", g, k), ("ul", g, k)
Node = tuple


def bs_node(g: int) -> Node:
    return ("bs", g)


def dl_node(g: int, k: int) -> Node:
    return ("dl", g, k)


def ul_node(g: int, k: int) -> Node:
    return ("ul", g, k)


@dataclass(eq=False)
class ChannelLink:
    true: np.ndarray
    est: np.ndarray
    err_var: float   # per-element estimation-error variance


@dataclass(eq=False)
class ChannelSet:
    """All receiver<-transmitter links of a realization, keyed by node pair."""

    links: dict

    def true(self, rx: Node, tx: Node) -> np.ndarray:
        return self.links[(rx, tx)].true

    def est(self, rx: Node, tx: Node) -> np.ndarray:
        return self.links[(rx, tx)].est

    def err_var(self, rx: Node, tx: Node) -> float:
        return self.links[(rx, tx)].err_var

    def sorted_keys(self):
        return sorted(self.links.keys())


@dataclass(eq=False)
class Realization:
    """One drawn network: geometry, hardware, and every channel matrix."""

    topology: Topology
    antennas: AntennaConfig
    hardware: HardwareProfile
    channels: ChannelSet
    seed: int

    def dl_users(self):
        for g in range(self.topology.cell_count):
            for k in range(self.topology.dl_counts[g]):
                yield g, k

    def ul_users(self):
        for g in range(self.topology.cell_count):
            for k in range(self.topology.ul_counts[g]):
                yield g, k

    @property
    def cell_count(self) -> int:
        return self.topology.cell_count


def _node_xy(topology: Topology, node: Node) -> np.ndarray:
    kind = node[0]
    if kind == "bs":
        return topology.bs_xy[node[1]]
    if kind == "dl":
        return topology.dl_xy[node[1]][node[2]]
    return topology.ul_xy[node[1]][node[2]]


def build_realization(config: ScenarioConfig, seed: int) -> Realization:
    """Draw a full network realization from a scenario config and a seed.

    The draw order (geometry, then links sorted by (receiver, transmitter)
    key) is fixed so that identical (config, seed) pairs are bit-reproducible
    and so that scenario fields which only rescale channels (e.g. the SI gain)
    do not perturb unrelated draws.
    """
    rng = np.random.default_rng(seed)
    topo = generate_topology(config.cells, config.dl_users, config.ul_users,
                             config.inter_site_distance_m, config.min_bs_user_distance_m, rng)
    ant = AntennaConfig(config.bs_tx_antennas, config.bs_rx_antennas,
                        config.ue_tx_antennas, config.ue_rx_antennas,
                        config.dl_streams, config.ul_streams)
    hw = HardwareProfile(
        kappa_bs=distortion_factor_from_bits(config.adc_bits),
        kappa_ue=distortion_factor_from_bits(config.adc_bits),
        beta_bs=distortion_factor_from_bits(config.adc_bits),
        beta_ue=distortion_factor_from_bits(config.adc_bits),
        noise_bs_w=noise_variance(config.noise_density_dbm_hz, config.bandwidth_hz,
                                  config.bs_noise_figure_db),
        noise_ue_w=noise_variance(config.noise_density_dbm_hz, config.bandwidth_hz,
                                  config.ue_noise_figure_db),
        p_bs_w=dbm_to_watts(config.bs_power_dbm),
        p_ue_w=dbm_to_watts(config.ue_power_dbm),
        si_gain=(db_to_linear(-config.asic_db),) * config.cells,
    )
    rician_k = db_to_linear(config.rician_k_db)

    cells = range(config.cells)
    receivers = [dl_node(g, k) for g in cells for k in range(config.dl_users)] \
        + [bs_node(g) for g in cells]
    transmitters = [bs_node(g) for g in cells] \
        + [ul_node(g, k) for g in cells for k in range(config.ul_users)]
    rx_size = {"dl": config.ue_rx_antennas, "bs": config.bs_rx_antennas}
    tx_size = {"bs": config.bs_tx_antennas, "ul": config.ue_tx_antennas}

    links = {}
    for rx in receivers:
        for tx in transmitters:
            rows, cols = rx_size[rx[0]], tx_size[tx[0]]
            if rx[0] == "bs" and tx[0] == "bs" and rx[1] == tx[1]:
                # self-interference: Rayleigh at the residual gain, perfect CSI
                h = generate_channel(hw.si_gain[rx[1]], rician_k, False, rows, cols, rng)
                links[(rx, tx)] = ChannelLink(true=h, est=h, err_var=0.0)
                continue
            d = float(np.linalg.norm(_node_xy(topo, rx) - _node_xy(topo, tx)))
            los = los_probability(d) >= 0.5
            gain = pathloss_umi(d, config.carrier_ghz, los)
            # stated fading rule pairs LOS geometry with Rayleigh draws; the
            # swap flag restores the conventional LOS -> Rician mapping
            use_rician = (not los) if not config.swap_los_fading else los
            h = generate_channel(gain, rician_k, use_rician, rows, cols, rng)
            est, err_var = apply_uncertainty(h, config.csi_error_factor, rng)
            links[(rx, tx)] = ChannelLink(true=h, est=est, err_var=err_var)

    return Realization(topology=topo, antennas=ant, hardware=hw,
                       channels=ChannelSet(links), seed=seed)


# ---------------------------------------------------------------------------
# single-link-direction restrictions (used by half-duplex baselines)
# ---------------------------------------------------------------------------


def _restrict(realization: Realization, keep_dl: bool, keep_ul: bool) -> Realization:
    topo = realization.topology
    new_topo = Topology(
        cell_count=topo.cell_count,
        dl_counts=topo.dl_counts if keep_dl else (0,) * topo.cell_count,
        ul_counts=topo.ul_counts if keep_ul else (0,) * topo.cell_count,
        bs_xy=topo.bs_xy,
        dl_xy=topo.dl_xy if keep_dl else tuple(np.empty((0, 2)) for _ in range(topo.cell_count)),
        ul_xy=topo.ul_xy if keep_ul else tuple(np.empty((0, 2)) for _ in range(topo.cell_count)),
        inter_site_distance_m=topo.inter_site_distance_m,
        min_bs_user_distance_m=topo.min_bs_user_distance_m,
    )

    def alive(node: Node) -> bool:
        if node[0] == "dl":
            return keep_dl
        if node[0] == "ul":
            return keep_ul
        return True

    links = {key: link for key, link in realization.channels.links.items()
             if alive(key[0]) and alive(key[1])}
    return replace(realization, topology=new_topo, channels=ChannelSet(links))


def restrict_to_downlink(realization: Realization) -> Realization:
    """Drop all uplink users (half-duplex downlink phase)."""
    return _restrict(realization, keep_dl=True, keep_ul=False)


def restrict_to_uplink(realization: Realization) -> Realization:
    """Drop all downlink users (half-duplex uplink phase)."""
    return _restrict(realization, keep_dl=False, keep_ul=True)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FORMAT_MAGIC = b"IBFDREAL"
_FORMAT_VERSION = 1


def _node_name(node: Node) -> str:
    return ":".join(str(part) for part in node)


def _parse_node(name: str) -> Node:
    parts = name.split(":")
    return (parts[0],) + tuple(int(p) for p in parts[1:])


def _payload(realization: Realization):
    """Canonical (metadata, arrays) pair; array order follows the metadata manifest."""
    topo, ant, hw = realization.topology, realization.antennas, realization.hardware
    arrays: list[tuple[str, np.ndarray]] = [("topology/bs_xy", topo.bs_xy)]
    for g in range(topo.cell_count):
        arrays.append((f"topology/dl_xy/{g}", topo.dl_xy[g]))
        arrays.append((f"topology/ul_xy/{g}", topo.ul_xy[g]))
    link_meta = []
    for rx, tx in realization.channels.sorted_keys():
        link = realization.channels.links[(rx, tx)]
        name = f"{_node_name(rx)}<{_node_name(tx)}"
        arrays.append((f"channel/{name}/true", link.true))
        arrays.append((f"channel/{name}/est", link.est))
        link_meta.append({"rx": _node_name(rx), "tx": _node_name(tx),
                          "err_var": link.err_var})
    meta = {
        "version": _FORMAT_VERSION,
        "seed": realization.seed,
        "topology": {
            "cell_count": topo.cell_count,
            "dl_counts": list(topo.dl_counts),
            "ul_counts": list(topo.ul_counts),
            "inter_site_distance_m": topo.inter_site_distance_m,
            "min_bs_user_distance_m": topo.min_bs_user_distance_m,
        },
        "antennas": {f.name: getattr(ant, f.name) for f in fields(ant)},
        "hardware": {f.name: (list(v) if isinstance(v := getattr(hw, f.name), tuple) else v)
                     for f in fields(hw)},
        "links": link_meta,
        "arrays": [{"name": name, "dtype": "<c16" if np.iscomplexobj(a) else "<f8",
                    "shape": list(a.shape)} for name, a in arrays],
    }
    return meta, arrays


def serialize_realization(realization: Realization) -> bytes:
    meta, arrays = _payload(realization)
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    blob = bytearray()
    blob += _FORMAT_MAGIC
    blob += _FORMAT_VERSION.to_bytes(4, "little")
    blob += len(head).to_bytes(8, "little")
    blob += head
    for (_, a), spec in zip(arrays, meta["arrays"]):
        blob += np.ascontiguousarray(a.astype(spec["dtype"], copy=False)).tobytes()
    return bytes(blob)


def realization_digest(realization: Realization) -> str:
    """Hex digest identifying the exact realization bytes."""
    return hashlib.sha256(serialize_realization(realization)).hexdigest()


def save_realization(realization: Realization, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_realization(realization))


def load_realization(path) -> Realization:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _FORMAT_MAGIC:
        raise ValueError("not a realization file (bad magic)")
    version = int.from_bytes(blob[8:12], "little")
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported realization format version {version}")
    head_len = int.from_bytes(blob[12:20], "little")
    meta = json.loads(blob[20:20 + head_len].decode())
    offset = 20 + head_len
    data = {}
    for spec in meta["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        itemsize = np.dtype(spec["dtype"]).itemsize
        a = np.frombuffer(blob[offset:offset + count * itemsize], dtype=spec["dtype"])
        data[spec["name"]] = a.reshape(spec["shape"]).copy()
        offset += count * itemsize

    tm = meta["topology"]
    topo = Topology(
        cell_count=tm["cell_count"],
        dl_counts=tuple(tm["dl_counts"]),
        ul_counts=tuple(tm["ul_counts"]),
        bs_xy=data["topology/bs_xy"],
        dl_xy=tuple(data[f"topology/dl_xy/{g}"] for g in range(tm["cell_count"])),
        ul_xy=tuple(data[f"topology/ul_xy/{g}"] for g in range(tm["cell_count"])),
        inter_site_distance_m=tm["inter_site_distance_m"],
        min_bs_user_distance_m=tm["min_bs_user_distance_m"],
    )
    ant = AntennaConfig(**meta["antennas"])
    hwm = dict(meta["hardware"])
    hwm["si_gain"] = tuple(hwm["si_gain"])
    hw = HardwareProfile(**hwm)
    links = {}
    for lm in meta["links"]:
        rx, tx = _parse_node(lm["rx"]), _parse_node(lm["tx"])
        name = f"{lm['rx']}<{lm['tx']}"
        links[(rx, tx)] = ChannelLink(true=data[f"channel/{name}/true"],
                                      est=data[f"channel/{name}/est"],
                                      err_var=lm["err_var"])
    return Realization(topology=topo, antennas=ant, hardware=hw,
                       channels=ChannelSet(links), seed=meta["seed"])

"""Dataset types, file formats, synthetic data generation and view splitting.

The toolkit operates on precomputed per-view descriptor vectors.  A dataset
bundle is a manifest (materials, views, categories) plus a descriptor matrix
with one row per view.  Human judgments live in an append-only answer store
keyed by (reference, unordered candidate pair).
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DESCRIPTOR_MAGIC = b"PDSC"
DESCRIPTOR_VERSION = 1


class DataError(ValueError):
    """Raised for malformed manifests, descriptors or answer files."""


@dataclass(frozen=True)
class MaterialId:
    id: str
    category: str

    def __post_init__(self):
        if not self.category:
            raise DataError(f"material {self.id!r}: empty category")


@dataclass(frozen=True)
class ViewRecord:
    view_id: str
    material_id: str
    shape_tag: str
    illumination_tag: str
    descriptor_row: int


@dataclass(frozen=True)
class DatasetBundle:
    name: str
    materials: tuple[MaterialId, ...]
    views: tuple[ViewRecord, ...]
    descriptors: np.ndarray  # float array, rows == len(views)
    categories: tuple[str, ...]
    assets_dir: Path | None = None

    def __post_init__(self):
        validate_bundle(self)

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]

    @property
    def material_ids(self) -> list[str]:
        return [m.id for m in self.materials]

    def material(self, mid: str) -> MaterialId:
        for m in self.materials:
            if m.id == mid:
                return m
        raise DataError(f"unknown material {mid!r}")

    def views_of(self, mid: str) -> list[ViewRecord]:
        return [v for v in self.views if v.material_id == mid]

    def view(self, view_id: str) -> ViewRecord:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise DataError(f"unknown view {view_id!r}")

    def shape_tags(self) -> list[str]:
        seen: dict[str, None] = {}
        for v in self.views:
            seen.setdefault(v.shape_tag)
        return list(seen)


def validate_bundle(bundle: DatasetBundle) -> None:
    ids = [m.id for m in bundle.materials]
    if len(set(ids)) != len(ids):
        dup = [i for i, c in Counter(ids).items() if c > 1]
        raise DataError(f"duplicate material ids: {dup}")
    cats = set(bundle.categories)
    for m in bundle.materials:
        if m.category not in cats:
            raise DataError(f"material {m.id!r}: undeclared category {m.category!r}")
    vids = [v.view_id for v in bundle.views]
    if len(set(vids)) != len(vids):
        dup = [i for i, c in Counter(vids).items() if c > 1]
        raise DataError(f"duplicate view ids: {dup}")
    keys = [(v.material_id, v.shape_tag, v.illumination_tag) for v in bundle.views]
    if len(set(keys)) != len(keys):
        dup = [k for k, c in Counter(keys).items() if c > 1]
        raise DataError(f"duplicate (material, shape, illumination) views: {dup}")
    known = set(ids)
    mat = bundle.descriptors
    if mat.ndim != 2:
        raise DataError("descriptor matrix must be 2-d")
    if mat.shape[0] != len(bundle.views):
        raise DataError(
            f"descriptor rows ({mat.shape[0]}) != view count ({len(bundle.views)})"
        )
    if not np.all(np.isfinite(mat)):
        r, c = np.argwhere(~np.isfinite(mat))[0]
        raise DataError(f"non-finite descriptor value at row {r}, col {c}")
    covered: set[str] = set()
    for v in bundle.views:
        if v.material_id not in known:
            raise DataError(f"view {v.view_id!r}: unknown material {v.material_id!r}")
        if not (0 <= v.descriptor_row < mat.shape[0]):
            raise DataError(f"view {v.view_id!r}: descriptor_row out of range")
        covered.add(v.material_id)
    missing = known - covered
    if missing:
        raise DataError(f"materials without views: {sorted(missing)}")


# ---------------------------------------------------------------------------
# Answers


@dataclass(frozen=True)
class TripletAnswer:
    reference: str
    option_a: str
    option_b: str
    chosen: str  # "A" | "B"
    worker: str
    kind: str = "trial"  # trial | control | training
    timestamp: str = ""

    def __post_init__(self):
        if self.chosen not in ("A", "B"):
            raise DataError(f"chosen must be 'A' or 'B', got {self.chosen!r}")
        if self.kind not in ("trial", "control", "training"):
            raise DataError(f"invalid trial kind {self.kind!r}")
        trip = (self.reference, self.option_a, self.option_b)
        if len(set(trip)) != 3:
            raise DataError(f"triplet materials must be pairwise distinct: {trip}")

    @property
    def chosen_material(self) -> str:
        return self.option_a if self.chosen == "A" else self.option_b

    @property
    def rejected_material(self) -> str:
        return self.option_b if self.chosen == "A" else self.option_a

    def key(self) -> tuple[str, frozenset]:
        return (self.reference, frozenset((self.option_a, self.option_b)))


class AnswerStore:
    """Collected 2AFC votes indexed by (reference, unordered candidate pair).

    Side order never fragments tallies: (r, a, b) and (r, b, a) land in the
    same bucket with the chosen side remapped to the chosen material.
    """

    def __init__(self, answers: list[TripletAnswer] | None = None):
        self.answers: list[TripletAnswer] = []
        self.index: dict[tuple[str, frozenset], Counter] = {}
        for ans in answers or []:
            self.add(ans)

    def add(self, answer: TripletAnswer) -> None:
        self.answers.append(answer)
        self.index.setdefault(answer.key(), Counter())[answer.chosen_material] += 1

    def extend(self, answers) -> None:
        for a in answers:
            self.add(a)

    def __len__(self) -> int:
        return len(self.answers)

    def tallies(self, reference: str, a: str, b: str) -> tuple[int, int]:
        """Votes for (a, b) given the reference, regardless of recorded order."""
        votes = self.index.get((reference, frozenset((a, b))), Counter())
        return votes[a], votes[b]

    def majority(self, reference: str, a: str, b: str) -> str | None:
        """Material winning the vote, or None on a tie / no votes."""
        va, vb = self.tallies(reference, a, b)
        if va == vb:
            return None
        return a if va > vb else b

    def comparisons(self) -> list[tuple[str, str, str]]:
        """One (reference, a, b) per distinct comparison, sides in first-seen order."""
        seen: dict[tuple[str, frozenset], tuple[str, str, str]] = {}
        for ans in self.answers:
            seen.setdefault(ans.key(), (ans.reference, ans.option_a, ans.option_b))
        return list(seen.values())

    def majority_triples(self) -> list[tuple[str, str, str]]:
        """Non-tied comparisons as (reference, majority, minority) triples."""
        out = []
        for r, a, b in self.comparisons():
            win = self.majority(r, a, b)
            if win is not None:
                out.append((r, win, b if win == a else a))
        return out

    def recount(self) -> dict[tuple[str, frozenset], Counter]:
        fresh: dict[tuple[str, frozenset], Counter] = {}
        for ans in self.answers:
            fresh.setdefault(ans.key(), Counter())[ans.chosen_material] += 1
        return fresh

    def check_tallies(self) -> bool:
        return self.recount() == self.index


# ---------------------------------------------------------------------------
# File formats


def load_manifest(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc


def bundle_from_manifest(manifest: dict, descriptors: np.ndarray,
                         assets_dir: Path | None = None) -> DatasetBundle:
    try:
        materials = tuple(
            MaterialId(m["id"], m["category"]) for m in manifest["materials"]
        )
        views = tuple(
            ViewRecord(v["view_id"], v["material_id"], v["shape"],
                       v["illumination"], int(v["descriptor_row"]))
            for v in manifest["views"]
        )
        name = manifest["name"]
        dim = int(manifest["descriptor_dim"])
        categories = tuple(manifest["categories"])
    except KeyError as exc:
        raise DataError(f"manifest missing field {exc}") from exc
    if descriptors.shape[1] != dim:
        raise DataError(
            f"descriptor_dim mismatch: manifest says {dim}, file has "
            f"{descriptors.shape[1]} columns"
        )
    return DatasetBundle(name, materials, views, descriptors, categories, assets_dir)


def manifest_of(bundle: DatasetBundle) -> dict:
    return {
        "name": bundle.name,
        "descriptor_dim": bundle.descriptor_dim,
        "categories": list(bundle.categories),
        "materials": [{"id": m.id, "category": m.category} for m in bundle.materials],
        "views": [
            {
                "view_id": v.view_id,
                "material_id": v.material_id,
                "shape": v.shape_tag,
                "illumination": v.illumination_tag,
                "descriptor_row": v.descriptor_row,
            }
            for v in bundle.views
        ],
    }


def load_dataset(manifest_path: Path, descriptors_path: Path | None = None) -> DatasetBundle:
    """Load a bundle from manifest.json plus a sibling descriptor file.

    When descriptors_path is omitted, looks for descriptors.pdsc then
    descriptors.csv next to the manifest.
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    if descriptors_path is None:
        for candidate in ("descriptors.pdsc", "descriptors.csv"):
            p = manifest_path.parent / candidate
            if p.exists():
                descriptors_path = p
                break
        else:
            raise DataError(f"no descriptor file next to {manifest_path}")
    descriptors, _ = load_descriptors(Path(descriptors_path))
    assets = manifest_path.parent / "assets"
    return bundle_from_manifest(
        manifest, descriptors, assets if assets.is_dir() else None
    )


def save_dataset(bundle: DatasetBundle, out_dir: Path, descriptor_format: str = "pdsc") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest_of(bundle), fh, indent=2)
        fh.write("\n")
    view_ids = [v.view_id for v in sorted(bundle.views, key=lambda v: v.descriptor_row)]
    if descriptor_format == "pdsc":
        save_descriptors_binary(out_dir / "descriptors.pdsc", bundle.descriptors)
    elif descriptor_format == "csv":
        save_descriptors_csv(out_dir / "descriptors.csv", bundle.descriptors, view_ids)
    else:
        raise DataError(f"unknown descriptor format {descriptor_format!r}")
    return manifest_path


def save_descriptors_binary(path: Path, matrix: np.ndarray) -> None:
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(DESCRIPTOR_MAGIC)
        fh.write(struct.pack("<III", DESCRIPTOR_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_descriptors_binary(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DESCRIPTOR_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        version, rows, cols = struct.unpack("<III", fh.read(12))
        if version != DESCRIPTOR_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
        if data.size != rows * cols:
            raise DataError(f"{path}: truncated descriptor payload")
    return data.reshape(rows, cols).astype(np.float64)


def save_descriptors_csv(path: Path, matrix: np.ndarray, view_ids: list[str]) -> None:
    if len(view_ids) != matrix.shape[0]:
        raise DataError("view id count != descriptor rows")
    with open(path, "w") as fh:
        fh.write("view_id," + ",".join(f"c{i}" for i in range(matrix.shape[1])) + "\n")
        for vid, row in zip(view_ids, matrix):
            fh.write(vid + "," + ",".join(repr(float(x)) for x in row) + "\n")


def load_descriptors_csv(path: Path) -> tuple[np.ndarray, list[str]]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[0] != "view_id":
            raise DataError(f"{path}: first CSV column must be view_id")
        rows, ids = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            ids.append(parts[0])
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    if not np.all(np.isfinite(matrix)):
        r, c = np.argwhere(~np.isfinite(matrix))[0]
        raise DataError(f"{path}: non-finite value at data row {r}, col {c}")
    return matrix, ids


def load_descriptors(path: Path) -> tuple[np.ndarray, list[str] | None]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"descriptor file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == DESCRIPTOR_MAGIC:
        return load_descriptors_binary(path), None
    matrix, ids = load_descriptors_csv(path)
    return matrix, ids


def save_answers(path: Path, store: AnswerStore) -> None:
    with open(path, "w") as fh:
        for ans in store.answers:
            fh.write(json.dumps({
                "reference": ans.reference,
                "option_a": ans.option_a,
                "option_b": ans.option_b,
                "chosen": ans.chosen,
                "worker": ans.worker,
                "kind": ans.kind,
                "timestamp": ans.timestamp,
            }) + "\n")


def load_answers(path: Path) -> AnswerStore:
    path = Path(path)
    if not path.exists():
        raise DataError(f"answers file not found: {path}")
    store = AnswerStore()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                store.add(TripletAnswer(
                    reference=obj["reference"],
                    option_a=obj["option_a"],
                    option_b=obj["option_b"],
                    chosen=obj["chosen"],
                    worker=obj["worker"],
                    kind=obj.get("kind", "trial"),
                    timestamp=obj.get("timestamp", ""),
                ))
            except (json.JSONDecodeError, KeyError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return store


# ---------------------------------------------------------------------------
# Synthetic planted-metric data


@dataclass(frozen=True)
class LatentGroundTruth:
    material_ids: tuple[str, ...]
    latents: np.ndarray        # (n_materials, latent_dim)
    true_distances: np.ndarray  # Euclidean, (n, n)

    def distance(self, a: str, b: str) -> float:
        ia = self.material_ids.index(a)
        ib = self.material_ids.index(b)
        return float(self.true_distances[ia, ib])


_SYNTH_CATEGORIES = ("metal", "plastic", "fabric", "paint")


def generate_synthetic(n_materials: int, views_per_material: int, latent_dim: int,
                       descriptor_dim: int, noise_sigma: float, seed: int,
                       ) -> tuple[DatasetBundle, LatentGroundTruth]:
    """Planted-metric dataset: latent points in [0,1]^L, views are a fixed
    random linear lift plus a shared per-(shape, illumination) offset plus
    Gaussian noise.  Deterministic per seed.
    """
    if n_materials < 1 or views_per_material < 1:
        raise DataError("n_materials and views_per_material must be >= 1")
    if descriptor_dim < latent_dim:
        raise DataError("descriptor_dim must be >= latent_dim")
    if noise_sigma < 0:
        raise DataError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    latents = rng.uniform(0.0, 1.0, size=(n_materials, latent_dim))
    lift = rng.normal(0.0, 1.0, size=(latent_dim, descriptor_dim))
    # one nuisance offset per (shape, illumination), shared across materials
    conditions = [(f"shape{i:02d}", "env00") for i in range(views_per_material)]
    offsets = rng.normal(0.0, 0.25, size=(len(conditions), descriptor_dim))

    materials = tuple(
        MaterialId(f"m{i:03d}", _SYNTH_CATEGORIES[i % len(_SYNTH_CATEGORIES)])
        for i in range(n_materials)
    )
    views = []
    rows = []
    for i, m in enumerate(materials):
        base = latents[i] @ lift
        for ci, (shape, env) in enumerate(conditions):
            noise = rng.normal(0.0, noise_sigma, size=descriptor_dim) if noise_sigma > 0 \
                else np.zeros(descriptor_dim)
            rows.append(base + offsets[ci] + noise)
            views.append(ViewRecord(f"{m.id}_{shape}_{env}", m.id, shape, env, len(rows) - 1))
    descriptors = np.vstack(rows)
    diffs = latents[:, None, :] - latents[None, :, :]
    true_d = np.sqrt(np.sum(diffs ** 2, axis=-1))
    bundle = DatasetBundle(
        name=f"synthetic-{n_materials}x{views_per_material}-seed{seed}",
        materials=materials, views=tuple(views), descriptors=descriptors,
        categories=_SYNTH_CATEGORIES,
    )
    truth = LatentGroundTruth(tuple(m.id for m in materials), latents, true_d)
    return bundle, truth


def simulate_answers(truth: LatentGroundTruth, triplets, votes_per_triplet: int,
                     decision_noise: float, seed: int, worker: str = "sim",
                     ) -> AnswerStore:
    """Synthetic annotator over planted distances.

    With decision_noise == 0 each vote is the deterministic argmin (fair coin
    on exact ties).  Otherwise A is chosen with probability
    s_ra / (s_ra + s_rb), s = 1/(1 + d2/decision_noise), d2 the squared true
    latent distance; decision_noise=1 gives the plain similarity quotient.
    """
    if votes_per_triplet < 1:
        raise DataError("votes_per_triplet must be >= 1")
    rng = np.random.default_rng(seed)
    store = AnswerStore()
    known = set(truth.material_ids)
    for r, a, b in triplets:
        for mid in (r, a, b):
            if mid not in known:
                raise DataError(f"triplet references unknown material {mid!r}")
        d_ra = truth.distance(r, a) ** 2
        d_rb = truth.distance(r, b) ** 2
        if decision_noise == 0:
            if d_ra == d_rb:
                p_a = 0.5
            else:
                p_a = 1.0 if d_ra < d_rb else 0.0
        else:
            s_ra = 1.0 / (1.0 + d_ra / decision_noise)
            s_rb = 1.0 / (1.0 + d_rb / decision_noise)
            p_a = s_ra / (s_ra + s_rb)
        for _ in range(votes_per_triplet):
            chosen = "A" if rng.random() < p_a else "B"
            store.add(TripletAnswer(r, a, b, chosen, worker))
    return store


def split_views(bundle: DatasetBundle, holdout_shapes: list[str],
                ) -> tuple[DatasetBundle, DatasetBundle]:
    """Partition views by shape tag into (train, held-out) bundles."""
    available = set(bundle.shape_tags())
    unknown = [s for s in holdout_shapes if s not in available]
    if unknown:
        raise DataError(f"holdout shapes not in dataset: {unknown}")
    holdout = set(holdout_shapes)

    def subset(keep) -> DatasetBundle:
        kept = [v for v in bundle.views if keep(v.shape_tag)]
        rows = np.array([v.descriptor_row for v in kept], dtype=int)
        descriptors = bundle.descriptors[rows].copy() if kept else \
            np.zeros((0, bundle.descriptor_dim))
        views = tuple(
            replace(v, descriptor_row=i) for i, v in enumerate(kept)
        )
        covered = {v.material_id for v in kept}
        materials = tuple(m for m in bundle.materials if m.id in covered)
        return DatasetBundle(bundle.name, materials, views, descriptors,
                             bundle.categories, bundle.assets_dir)

    train_views = [v for v in bundle.views if v.shape_tag not in holdout]
    if not train_views:
        raise DataError("holdout would empty the training set")
    train = subset(lambda s: s not in holdout)
    if holdout:
        held = subset(lambda s: s in holdout)
    else:
        held = DatasetBundle(bundle.name, (), (),
                             np.zeros((0, bundle.descriptor_dim)),
                             bundle.categories, bundle.assets_dir)
    return train, held

"""Embedding models: parameter storage, scoring, and score gradients.

Five model families over entity embeddings in R^d:

* rescal:   s = e_s^T R_k e_o with a full d x d relation matrix
* transe:   s = -||e_s + r_k - e_o|| (l1 or l2 norm)
* distmult: s = sum_m e_sm r_km e_om
* complex:  s = Re(sum_m e_sm r_km conj(e_om)); complex vectors are stored
            as 2d reals, real half then imaginary half
* analogy:  s = e_s^T B_k e_o with B_k block-diagonal, each block a real
            scalar or a 2x2 matrix [[x, -y], [y, x]]

The factorized scalar scores (distmult, complex, analogy) multiply the two
entity coordinates together before the relation coordinate and share one
np.sum reduction. That evaluation order makes the documented exact
identities hold in floating point, not just algebraically: distmult is
exactly symmetric, complex with zero imaginary parts equals distmult, and
analogy with all-scalar blocks equals distmult.

Row scoring (score_row / score_col) is vectorized over all entities;
score_block slices full rows, so a block entry never depends on the tile
shape. Row values may differ from the scalar path by normal floating-point
reassociation, within 1e-6 relative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigurationError
from .scorers import block_from_rows

MODEL_KINDS = ("rescal", "transe", "distmult", "complex", "analogy")


@dataclass(frozen=True)
class BlockLayout:
    """Block structure of an analogy relation matrix: ``scalars`` 1x1 blocks
    followed by ``pairs`` 2x2 blocks, with scalars + 2*pairs == dim."""

    scalars: int
    pairs: int

    def __post_init__(self) -> None:
        if self.scalars < 0 or self.pairs < 0:
            raise ConfigurationError(f"negative block counts: {self}")

    @property
    def dim(self) -> int:
        return self.scalars + 2 * self.pairs

    @staticmethod
    def for_dim(dim: int) -> "BlockLayout":
        return BlockLayout(dim % 2, dim // 2)


class ScoreGradients(NamedTuple):
    """Partial derivatives of a score with respect to the stored subject
    row, relation row (matrix for rescal), and object row."""

    subject: np.ndarray
    relation: np.ndarray
    object: np.ndarray


class EmbeddingModel:
    """Base for the concrete models; holds the parameter arrays.

    Scoring is read-only and safe for concurrent callers; training owns
    exclusive write access to the arrays.
    """

    kind: str = ""

    def __init__(self, entity_emb: np.ndarray, relation_emb: np.ndarray, dim: int):
        self.entity_emb = entity_emb
        self.relation_emb = relation_emb
        self.dim = dim

    @property
    def n_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_emb.shape[0]

    def score(self, subject: int, relation: int, object: int) -> float:
        raise NotImplementedError

    def score_row(self, subject: int, relation: int) -> np.ndarray:
        raise NotImplementedError

    def score_col(self, relation: int, object: int) -> np.ndarray:
        raise NotImplementedError

    def score_block(self, relation: int, subjects, objects) -> np.ndarray:
        return block_from_rows(self, relation, subjects, objects)

    def score_gradients(self, subject: int, relation: int, object: int) -> ScoreGradients:
        raise NotImplementedError

    def score_and_gradients(self, subject: int, relation: int, object: int) -> tuple[float, ScoreGradients]:
        """Score plus gradients in one call; overridden where the two share
        intermediates. The score value is identical to :meth:`score`."""
        return self.score(subject, relation, object), self.score_gradients(subject, relation, object)

    def copy(self):
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out.entity_emb = self.entity_emb.copy()
        out.relation_emb = self.relation_emb.copy()
        return out

    def _extra_config(self) -> dict:
        return {}


class RescalModel(EmbeddingModel):
    """Bilinear score with one full d x d matrix per relation."""

    kind = "rescal"

    def score(self, subject, relation, object):
        e_s = self.entity_emb[subject]
        e_o = self.entity_emb[object]
        return float(e_s @ (self.relation_emb[relation] @ e_o))

    def score_row(self, subject, relation):
        left = self.relation_emb[relation].T @ self.entity_emb[subject]
        return self.entity_emb @ left

    def score_col(self, relation, object):
        right = self.relation_emb[relation] @ self.entity_emb[object]
        return self.entity_emb @ right

    def score_gradients(self, subject, relation, object):
        e_s = self.entity_emb[subject]
        e_o = self.entity_emb[object]
        rel = self.relation_emb[relation]
        return ScoreGradients(rel @ e_o, np.outer(e_s, e_o), rel.T @ e_s)

    def score_and_gradients(self, subject, relation, object):
        e_s = self.entity_emb[subject]
        e_o = self.entity_emb[object]
        rel = self.relation_emb[relation]
        r_o = rel @ e_o
        return float(e_s @ r_o), ScoreGradients(r_o, np.outer(e_s, e_o), rel.T @ e_s)


class TransEModel(EmbeddingModel):
    """Translation score -||e_s + r - e_o|| under the l1 or l2 norm."""

    kind = "transe"

    def __init__(self, entity_emb, relation_emb, dim, norm: str = "l1"):
        super().__init__(entity_emb, relation_emb, dim)
        if norm not in ("l1", "l2"):
            raise ConfigurationError(f"transe norm must be 'l1' or 'l2', got {norm!r}")
        self.norm = norm

    def _extra_config(self):
        return {"norm": self.norm}

    def score(self, subject, relation, object):
        u = self.entity_emb[subject] + self.relation_emb[relation] - self.entity_emb[object]
        if self.norm == "l1":
            return float(-np.sum(np.abs(u)))
        return float(-np.sqrt(np.sum(u * u)))

    def score_row(self, subject, relation):
        diff = (self.entity_emb[subject] + self.relation_emb[relation]) - self.entity_emb
        if self.norm == "l1":
            return -np.sum(np.abs(diff), axis=1)
        return -np.sqrt(np.sum(diff * diff, axis=1))

    def score_col(self, relation, object):
        diff = (self.entity_emb + self.relation_emb[relation]) - self.entity_emb[object]
        if self.norm == "l1":
            return -np.sum(np.abs(diff), axis=1)
        return -np.sqrt(np.sum(diff * diff, axis=1))

    def score_gradients(self, subject, relation, object):
        return self.score_and_gradients(subject, relation, object)[1]

    def score_and_gradients(self, subject, relation, object):
        u = self.entity_emb[subject] + self.relation_emb[relation] - self.entity_emb[object]
        if self.norm == "l1":
            value = float(-np.sum(np.abs(u)))
            g = np.sign(u)  # subgradient, sign(0) = 0
        else:
            n = np.sqrt(np.sum(u * u))
            value = float(-n)
            g = u / n if n > 0.0 else np.zeros_like(u)
        return value, ScoreGradients(-g, -g.copy(), g)


class DistMultModel(EmbeddingModel):
    """Diagonal bilinear score; symmetric in subject and object by
    construction, including in floating point."""

    kind = "distmult"

    def score(self, subject, relation, object):
        terms = (self.entity_emb[subject] * self.entity_emb[object]) * self.relation_emb[relation]
        return float(np.sum(terms))

    def score_row(self, subject, relation):
        # entity product first: the (i, j) and (j, i) rows then share every
        # rounding step, keeping the symmetry exact in block scans too
        return (self.entity_emb * self.entity_emb[subject]) @ self.relation_emb[relation]

    def score_col(self, relation, object):
        return (self.entity_emb * self.entity_emb[object]) @ self.relation_emb[relation]

    def score_gradients(self, subject, relation, object):
        e_s = self.entity_emb[subject]
        e_o = self.entity_emb[object]
        r = self.relation_emb[relation]
        return ScoreGradients(r * e_o, e_s * e_o, e_s * r)

    def score_and_gradients(self, subject, relation, object):
        e_s = self.entity_emb[subject]
        e_o = self.entity_emb[object]
        r = self.relation_emb[relation]
        ss = e_s * e_o
        value = float(np.sum(ss * r))
        return value, ScoreGradients(r * e_o, ss, e_s * r)


class ComplExModel(EmbeddingModel):
    """Complex diagonal bilinear score, real part only.

    The object embedding is conjugated by default, which is what makes the
    model able to represent asymmetric relations; ``conjugate_object=False``
    evaluates the plain (symmetric-in-modulus) product instead for
    comparison runs.
    """

    kind = "complex"

    def __init__(self, entity_emb, relation_emb, dim, conjugate_object: bool = True):
        super().__init__(entity_emb, relation_emb, dim)
        self.conjugate_object = conjugate_object

    def _extra_config(self):
        return {"conjugate_object": self.conjugate_object}

    def _sign(self) -> float:
        return 1.0 if self.conjugate_object else -1.0

    def score(self, subject, relation, object):
        d = self.dim
        a, b = self.entity_emb[subject, :d], self.entity_emb[subject, d:]
        e, f = self.entity_emb[object, :d], self.entity_emb[object, d:]
        re_r, im_r = self.relation_emb[relation, :d], self.relation_emb[relation, d:]
        sg = self._sign()
        u1 = a * e + sg * (b * f)
        u2 = sg * (a * f) - b * e
        return float(np.sum(re_r * u1 + im_r * u2))

    def score_row(self, subject, relation):
        d = self.dim
        a, b = self.entity_emb[subject, :d], self.entity_emb[subject, d:]
        re_r, im_r = self.relation_emb[relation, :d], self.relation_emb[relation, d:]
        ent_re, ent_im = self.entity_emb[:, :d], self.entity_emb[:, d:]
        sg = self._sign()
        u1 = ent_re * a + sg * (ent_im * b)
        u2 = sg * (ent_im * a) - ent_re * b
        return u1 @ re_r + u2 @ im_r

    def score_col(self, relation, object):
        d = self.dim
        e, f = self.entity_emb[object, :d], self.entity_emb[object, d:]
        re_r, im_r = self.relation_emb[relation, :d], self.relation_emb[relation, d:]
        ent_re, ent_im = self.entity_emb[:, :d], self.entity_emb[:, d:]
        sg = self._sign()
        return ent_re @ (re_r * e + sg * (im_r * f)) + ent_im @ (sg * (re_r * f) - im_r * e)

    def score_gradients(self, subject, relation, object):
        return self.score_and_gradients(subject, relation, object)[1]

    def score_and_gradients(self, subject, relation, object):
        d = self.dim
        a, b = self.entity_emb[subject, :d], self.entity_emb[subject, d:]
        e, f = self.entity_emb[object, :d], self.entity_emb[object, d:]
        re_r, im_r = self.relation_emb[relation, :d], self.relation_emb[relation, d:]
        sg = self._sign()
        u1 = a * e + sg * (b * f)
        u2 = sg * (a * f) - b * e
        value = float(np.sum(re_r * u1 + im_r * u2))
        g_subject = np.concatenate([re_r * e + sg * (im_r * f), sg * (re_r * f) - im_r * e])
        g_relation = np.concatenate([u1, u2])
        g_object = np.concatenate([re_r * a - im_r * b, sg * (re_r * b + im_r * a)])
        return value, ScoreGradients(g_subject, g_relation, g_object)


class AnalogyModel(EmbeddingModel):
    """Block-diagonal bilinear score.

    The relation row stores the scalar-block values first, then (x, y)
    parameters of each 2x2 block interleaved; the matching entity
    coordinates are the first ``scalars`` entries followed by the
    coordinate pairs of each block.
    """

    kind = "analogy"

    def __init__(self, entity_emb, relation_emb, dim, layout: BlockLayout):
        super().__init__(entity_emb, relation_emb, dim)
        if layout.dim != dim:
            raise ConfigurationError(
                f"block layout {layout} covers {layout.dim} coordinates, expected {dim}"
            )
        self.layout = layout

    def _extra_config(self):
        return {"scalars": self.layout.scalars, "pairs": self.layout.pairs}

    def _parts(self, vec):
        # scalar coordinates, then the (p, q) coordinates of each 2x2 block
        ns = self.layout.scalars
        tail = vec[ns:]
        return vec[:ns], tail[0::2], tail[1::2]

    def score(self, subject, relation, object):
        w, x, y = self._parts(self.relation_emb[relation])
        s_sc, sp, sq = self._parts(self.entity_emb[subject])
        o_sc, op, oq = self._parts(self.entity_emb[object])
        total = float(np.sum((s_sc * o_sc) * w))
        if self.layout.pairs:
            total += float(np.sum(x * (sp * op + sq * oq) + y * (sq * op - sp * oq)))
        return total

    def _transform_subject(self, subject_vec, relation) -> np.ndarray:
        """B_k^T e_s, so that a score row is one matrix-vector product."""
        w, x, y = self._parts(self.relation_emb[relation])
        s_sc, sp, sq = self._parts(subject_vec)
        out = np.empty_like(subject_vec)
        ns = self.layout.scalars
        out[:ns] = w * s_sc
        out[ns::2] = x * sp + y * sq
        out[ns + 1 :: 2] = x * sq - y * sp
        return out

    def _transform_object(self, object_vec, relation) -> np.ndarray:
        """B_k e_o."""
        w, x, y = self._parts(self.relation_emb[relation])
        o_sc, op, oq = self._parts(object_vec)
        out = np.empty_like(object_vec)
        ns = self.layout.scalars
        out[:ns] = w * o_sc
        out[ns::2] = x * op - y * oq
        out[ns + 1 :: 2] = x * oq + y * op
        return out

    def score_row(self, subject, relation):
        return self.entity_emb @ self._transform_subject(self.entity_emb[subject], relation)

    def score_col(self, relation, object):
        return self.entity_emb @ self._transform_object(self.entity_emb[object], relation)

    def score_gradients(self, subject, relation, object):
        return self.score_and_gradients(subject, relation, object)[1]

    def score_and_gradients(self, subject, relation, object):
        w, x, y = self._parts(self.relation_emb[relation])
        s_sc, sp, sq = self._parts(self.entity_emb[subject])
        o_sc, op, oq = self._parts(self.entity_emb[object])
        scalar_terms = (s_sc * o_sc) * w
        value = float(np.sum(scalar_terms))
        g_rel = np.empty(self.dim)
        ns = self.layout.scalars
        g_rel[:ns] = s_sc * o_sc
        g_x = sp * op + sq * oq
        g_y = sq * op - sp * oq
        g_rel[ns::2] = g_x
        g_rel[ns + 1 :: 2] = g_y
        if self.layout.pairs:
            value += float(np.sum(x * g_x + y * g_y))
        g_subject = self._transform_object(self.entity_emb[object], relation)
        g_object = self._transform_subject(self.entity_emb[subject], relation)
        return value, ScoreGradients(g_subject, g_rel, g_object)

    def relation_matrix(self, relation: int) -> np.ndarray:
        """Decode the block parameters into the dense d x d matrix."""
        w, x, y = self._parts(self.relation_emb[relation])
        ns = self.layout.scalars
        mat = np.zeros((self.dim, self.dim))
        for t in range(ns):
            mat[t, t] = w[t]
        for m in range(self.layout.pairs):
            p = ns + 2 * m
            mat[p, p] = x[m]
            mat[p, p + 1] = -y[m]
            mat[p + 1, p] = y[m]
            mat[p + 1, p + 1] = x[m]
        return mat


def init_params(
    kind: str,
    dim: int,
    n_entities: int,
    n_relations: int,
    seed: int,
    scale: float = 1.0,
    *,
    norm: str = "l1",
    layout: BlockLayout | None = None,
    conjugate_object: bool = True,
) -> EmbeddingModel:
    """Create a model with entries drawn i.i.d. uniform in
    [-scale/sqrt(dim), +scale/sqrt(dim)] from a seeded generator. The same
    arguments always produce bitwise-identical parameters."""
    if dim < 1:
        raise ConfigurationError(f"dim must be >= 1, got {dim}")
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    half = scale / np.sqrt(dim)
    rng = np.random.default_rng(seed)

    def draw(shape):
        return rng.uniform(-half, half, size=shape)

    if kind == "rescal":
        return RescalModel(draw((n_entities, dim)), draw((n_relations, dim, dim)), dim)
    if kind == "transe":
        return TransEModel(draw((n_entities, dim)), draw((n_relations, dim)), dim, norm=norm)
    if kind == "distmult":
        return DistMultModel(draw((n_entities, dim)), draw((n_relations, dim)), dim)
    if kind == "complex":
        return ComplExModel(
            draw((n_entities, 2 * dim)),
            draw((n_relations, 2 * dim)),
            dim,
            conjugate_object=conjugate_object,
        )
    layout = layout if layout is not None else BlockLayout.for_dim(dim)
    if layout.dim != dim:
        raise ConfigurationError(f"layout {layout} inconsistent with dim {dim}")
    return AnalogyModel(draw((n_entities, dim)), draw((n_relations, dim)), dim, layout)


_CHECKPOINT_MAGIC = "kbcbench-checkpoint"


def save_checkpoint(model: EmbeddingModel, path: str | Path) -> None:
    """Write parameters to a self-describing binary file.

    One JSON header line, then the raw little-endian float64 bytes of the
    entity and relation arrays. Saving a loaded checkpoint reproduces the
    original bytes exactly.
    """
    header = {
        "format": _CHECKPOINT_MAGIC,
        "version": 1,
        "kind": model.kind,
        "dim": model.dim,
        "entity_shape": list(model.entity_emb.shape),
        "relation_shape": list(model.relation_emb.shape),
        "extra": model._extra_config(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(model.entity_emb, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.relation_emb, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != _CHECKPOINT_MAGIC:
            raise ConfigurationError(f"{path} is not a parameter checkpoint")
        ent_shape = tuple(header["entity_shape"])
        rel_shape = tuple(header["relation_shape"])
        ent = np.frombuffer(fh.read(8 * int(np.prod(ent_shape))), dtype="<f8").reshape(ent_shape).copy()
        rel = np.frombuffer(fh.read(8 * int(np.prod(rel_shape))), dtype="<f8").reshape(rel_shape).copy()
    kind = header["kind"]
    dim = header["dim"]
    extra = header.get("extra", {})
    if kind == "rescal":
        return RescalModel(ent, rel, dim)
    if kind == "transe":
        return TransEModel(ent, rel, dim, norm=extra.get("norm", "l1"))
    if kind == "distmult":
        return DistMultModel(ent, rel, dim)
    if kind == "complex":
        return ComplExModel(ent, rel, dim, conjugate_object=extra.get("conjugate_object", True))
    if kind == "analogy":
        layout = BlockLayout(extra["scalars"], extra["pairs"])
        return AnalogyModel(ent, rel, dim, layout)
    raise ConfigurationError(f"unknown model kind in checkpoint: {kind!r}")

"""Encoder-ready slot sequences with marker pairs and directional visibility.

A layout is the text tokens of a context window plus marker slots:

* span layouts append one floating marker pair per candidate span after
  the text block; each pair copies the position ids of its span's
  boundary tokens and is visible only to the text stream, itself, and
  its partner;
* pair layouts additionally splice a pair of in-stream subject markers
  around the subject span (these behave exactly like text and shift all
  following positions by one each), then append floating object pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .corpus import ContextWindow, Corpus
from .errors import DataValidationError, LayoutError, SlotOverflowError
from .spanspace import Span, SpanGroup


class SlotRole(IntEnum):
    TEXT = 0
    SOLID = 1
    LEV_START = 2
    LEV_END = 3


_STREAM_ROLES = (SlotRole.TEXT, SlotRole.SOLID)


@dataclass(frozen=True)
class MarkerVocab:
    """Vocabulary ids of the six marker tokens; all distinct from text ids."""

    span_start_id: int
    span_end_id: int
    subj_start_id: int
    subj_end_id: int
    obj_start_id: int
    obj_end_id: int

    def __post_init__(self) -> None:
        ids = self.all_ids()
        if len(set(ids)) != len(ids):
            raise DataValidationError(f"marker ids must be distinct, got {ids}")

    def all_ids(self) -> tuple[int, ...]:
        return (
            self.span_start_id,
            self.span_end_id,
            self.subj_start_id,
            self.subj_end_id,
            self.obj_start_id,
            self.obj_end_id,
        )

    @classmethod
    def with_offset(cls, first_id: int) -> "MarkerVocab":
        """Six consecutive ids starting right after the text vocabulary."""
        return cls(*range(first_id, first_id + 6))


@dataclass
class TokenVocab:
    """Deterministic string-to-id map for text tokens; id 0 is unknown."""

    tokens: tuple[str, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._index = {t: i + 1 for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpus: Corpus) -> "TokenVocab":
        return cls(tuple(sorted({t for doc in corpus for t in doc.tokens})))

    def id_of(self, token: str) -> int:
        return self._index.get(token, 0)

    @property
    def size(self) -> int:
        return len(self.tokens) + 1

    @property
    def first_free_id(self) -> int:
        return self.size


@dataclass(frozen=True)
class MarkerOrigin:
    """Backpointer from a marker slot to the span it stands for."""

    span: Span
    ordinal: Optional[int]
    role: SlotRole


@dataclass
class EncodingLayout:
    """Slot sequence with per-slot position ids and a visibility matrix.

    Immutable by convention after construction. ``text_slots[t - 1]`` is
    the slot index of window token ``t``; ``origin`` maps every marker
    slot back to its span; ``partner`` pairs up floating marker slots.
    """

    slot_token_ids: np.ndarray
    slot_position_ids: np.ndarray
    visibility: np.ndarray
    slot_roles: np.ndarray
    origin: dict[int, MarkerOrigin]
    partner: dict[int, int]
    text_slots: np.ndarray
    subject: Optional[Span] = None

    @property
    def num_slots(self) -> int:
        return len(self.slot_token_ids)

    @property
    def kind(self) -> str:
        return "pair" if np.any(self.slot_roles == SlotRole.SOLID) else "span"

    def marker_slots(self, span: Span) -> tuple[int, int]:
        """(LEV_START, LEV_END) slot indices of the span's floating pair."""
        start = end = None
        for slot, org in self.origin.items():
            if org.span == span and org.role == SlotRole.LEV_START:
                start = slot
            elif org.span == span and org.role == SlotRole.LEV_END:
                end = slot
        if start is None or end is None:
            raise KeyError(
                f"span ({span.start}, {span.end}) has no marker pair in this layout"
            )
        return start, end

    def solid_slots(self) -> tuple[int, int]:
        """(start, end) slot indices of the in-stream subject markers."""
        slots = np.flatnonzero(self.slot_roles == SlotRole.SOLID)
        if len(slots) != 2:
            raise LayoutError("layout has no subject marker pair")
        return int(slots[0]), int(slots[1])

    def text_slot(self, window_pos: int) -> int:
        return int(self.text_slots[window_pos - 1])


def _rule_visibility(roles: np.ndarray, partner: dict[int, int]) -> np.ndarray:
    """Visibility matrix implied by slot roles and the partner map.

    Stream slots (text and solid markers) see exactly the stream;
    floating markers see the stream, themselves, and their partner.
    """
    stream = roles <= SlotRole.SOLID
    vis = np.zeros((len(roles), len(roles)), dtype=bool)
    vis[:, stream] = True
    for i, j in partner.items():
        vis[i, i] = True
        vis[i, j] = True
    return vis


def _check_in_window(span: Span, n: int, what: str) -> None:
    if span.end > n:
        raise LayoutError(
            f"{what} ({span.start}, {span.end}) outside window of {n} tokens"
        )


def _window_token_ids(window: ContextWindow, token_vocab: TokenVocab) -> list[int]:
    return [token_vocab.id_of(t) for t in window.window_tokens]


def build_span_layout(
    window: ContextWindow,
    group: Union[SpanGroup, Iterable[Span]],
    marker_vocab: MarkerVocab,
    token_vocab: TokenVocab,
    max_slots: Optional[int] = None,
) -> EncodingLayout:
    """Text block followed by one floating marker pair per span in the group.

    Text token ``t`` keeps position id ``t``; the pair of span ``(a, b)``
    gets position ids ``a`` and ``b``. An empty group yields a text-only
    layout.
    """
    if isinstance(group, SpanGroup):
        spans, gidx = group.spans, group.group_index
    else:
        spans, gidx = tuple(group), 0
    n = len(window.window_tokens)
    for sp in spans:
        _check_in_window(sp, n, "span")
    num_slots = n + 2 * len(spans)
    if max_slots is not None and num_slots > max_slots:
        raise SlotOverflowError(
            f"group {gidx}: {num_slots} slots exceed the budget of {max_slots}"
        )

    token_ids = _window_token_ids(window, token_vocab)
    positions = list(range(1, n + 1))
    roles = [int(SlotRole.TEXT)] * n
    origin: dict[int, MarkerOrigin] = {}
    partner: dict[int, int] = {}
    for g, sp in enumerate(spans):
        s_slot = n + 2 * g
        e_slot = s_slot + 1
        token_ids += [marker_vocab.span_start_id, marker_vocab.span_end_id]
        positions += [sp.start, sp.end]
        roles += [int(SlotRole.LEV_START), int(SlotRole.LEV_END)]
        origin[s_slot] = MarkerOrigin(sp, g, SlotRole.LEV_START)
        origin[e_slot] = MarkerOrigin(sp, g, SlotRole.LEV_END)
        partner[s_slot] = e_slot
        partner[e_slot] = s_slot

    roles_arr = np.array(roles, dtype=np.int8)
    return EncodingLayout(
        slot_token_ids=np.array(token_ids, dtype=np.int64),
        slot_position_ids=np.array(positions, dtype=np.int64),
        visibility=_rule_visibility(roles_arr, partner),
        slot_roles=roles_arr,
        origin=origin,
        partner=partner,
        text_slots=np.arange(n, dtype=np.int64),
    )


def build_pair_layout(
    window: ContextWindow,
    subject: Span,
    objects: Sequence[Span],
    marker_vocab: MarkerVocab,
    token_vocab: TokenVocab,
    max_slots: Optional[int] = None,
) -> EncodingLayout:
    """Subject spliced between in-stream markers, objects as floating pairs.

    The subject markers join the text stream (inserted directly before
    and after the subject span), so stream positions are reindexed
    ``1..n+2``; each object pair copies the reindexed positions of its
    boundary tokens. Objects may share positions with the subject
    markers or each other freely.
    """
    n = len(window.window_tokens)
    _check_in_window(subject, n, "subject")
    for ob in objects:
        _check_in_window(ob, n, "object")
    num_slots = n + 2 + 2 * len(objects)
    if max_slots is not None and num_slots > max_slots:
        raise SlotOverflowError(
            f"subject ({subject.start}, {subject.end}): {num_slots} slots "
            f"exceed the budget of {max_slots}"
        )

    a, b = subject.start, subject.end
    window_ids = _window_token_ids(window, token_vocab)
    token_ids: list[int] = []
    roles: list[int] = []
    text_slots = np.zeros(n, dtype=np.int64)
    for t in range(1, a):
        text_slots[t - 1] = len(token_ids)
        token_ids.append(window_ids[t - 1])
        roles.append(int(SlotRole.TEXT))
    subj_start_slot = len(token_ids)
    token_ids.append(marker_vocab.subj_start_id)
    roles.append(int(SlotRole.SOLID))
    for t in range(a, b + 1):
        text_slots[t - 1] = len(token_ids)
        token_ids.append(window_ids[t - 1])
        roles.append(int(SlotRole.TEXT))
    subj_end_slot = len(token_ids)
    token_ids.append(marker_vocab.subj_end_id)
    roles.append(int(SlotRole.SOLID))
    for t in range(b + 1, n + 1):
        text_slots[t - 1] = len(token_ids)
        token_ids.append(window_ids[t - 1])
        roles.append(int(SlotRole.TEXT))

    positions = list(range(1, n + 3))
    origin: dict[int, MarkerOrigin] = {
        subj_start_slot: MarkerOrigin(subject, None, SlotRole.SOLID),
        subj_end_slot: MarkerOrigin(subject, None, SlotRole.SOLID),
    }
    partner: dict[int, int] = {}
    for g, ob in enumerate(objects):
        s_slot = len(token_ids)
        e_slot = s_slot + 1
        token_ids += [marker_vocab.obj_start_id, marker_vocab.obj_end_id]
        positions += [int(text_slots[ob.start - 1]) + 1, int(text_slots[ob.end - 1]) + 1]
        roles += [int(SlotRole.LEV_START), int(SlotRole.LEV_END)]
        origin[s_slot] = MarkerOrigin(ob, g, SlotRole.LEV_START)
        origin[e_slot] = MarkerOrigin(ob, g, SlotRole.LEV_END)
        partner[s_slot] = e_slot
        partner[e_slot] = s_slot

    roles_arr = np.array(roles, dtype=np.int8)
    return EncodingLayout(
        slot_token_ids=np.array(token_ids, dtype=np.int64),
        slot_position_ids=np.array(positions, dtype=np.int64),
        visibility=_rule_visibility(roles_arr, partner),
        slot_roles=roles_arr,
        origin=origin,
        partner=partner,
        text_slots=text_slots,
        subject=subject,
    )


def validate_layout(layout: EncodingLayout) -> list[str]:
    """All invariant violations of a layout; empty means valid."""
    v: list[str] = []
    S = layout.num_slots
    if (
        len(layout.slot_position_ids) != S
        or len(layout.slot_roles) != S
        or layout.visibility.shape != (S, S)
    ):
        return ["slot arrays and visibility matrix have inconsistent sizes"]

    roles = layout.slot_roles
    if not np.all((roles >= SlotRole.TEXT) & (roles <= SlotRole.LEV_END)):
        v.append("unknown slot role value")
        return v

    # Stream positions must be exactly 1..n_stream in slot order.
    stream = np.flatnonzero(roles <= SlotRole.SOLID)
    stream_pos = layout.slot_position_ids[stream]
    for k, (slot, pos) in enumerate(zip(stream, stream_pos), start=1):
        if pos != k:
            v.append(f"slot {slot}: stream position id {pos}, expected {k}")

    # Floating markers: origin-backed perfect matching with position sharing.
    lev = [int(i) for i in np.flatnonzero(roles >= SlotRole.LEV_START)]
    pairs: dict[tuple, dict[SlotRole, int]] = {}
    for slot in lev:
        org = layout.origin.get(slot)
        if org is None:
            v.append(f"slot {slot}: floating marker without origin entry")
            continue
        if int(roles[slot]) != org.role:
            v.append(f"slot {slot}: origin role {org.role.name} mismatches slot role")
        pairs.setdefault((org.span, org.ordinal), {})[org.role] = slot

    text_idx = np.flatnonzero(roles == SlotRole.TEXT)
    text_count = len(text_idx)
    if len(layout.text_slots) == text_count and np.all(layout.text_slots == text_idx):
        text_positions = {
            t: int(layout.slot_position_ids[text_idx[t - 1]])
            for t in range(1, text_count + 1)
        }
    else:
        text_positions = None
        v.append("text slot index does not cover exactly the TEXT slots")

    for (span, ordinal), members in sorted(
        pairs.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])
    ):
        if set(members) != {SlotRole.LEV_START, SlotRole.LEV_END}:
            v.append(
                f"span ({span.start}, {span.end}) pair {ordinal}: expected one "
                f"LEV_START and one LEV_END, got {sorted(r.name for r in members)}"
            )
            continue
        s_slot, e_slot = members[SlotRole.LEV_START], members[SlotRole.LEV_END]
        if layout.partner.get(s_slot) != e_slot or layout.partner.get(e_slot) != s_slot:
            v.append(f"slots {s_slot},{e_slot}: partner map is not the origin pairing")
        if text_positions is not None:
            if span.end > text_count:
                v.append(f"span ({span.start}, {span.end}) outside the text stream")
                continue
            want_s, want_e = text_positions[span.start], text_positions[span.end]
            if layout.slot_position_ids[s_slot] != want_s:
                v.append(
                    f"slot {s_slot}: LEV_START position id "
                    f"{layout.slot_position_ids[s_slot]}, expected {want_s} "
                    f"(shared with token {span.start})"
                )
            if layout.slot_position_ids[e_slot] != want_e:
                v.append(
                    f"slot {e_slot}: LEV_END position id "
                    f"{layout.slot_position_ids[e_slot]}, expected {want_e} "
                    f"(shared with token {span.end})"
                )

    # Solid markers: exactly zero or two, directly around their subject span.
    solid = [int(i) for i in np.flatnonzero(roles == SlotRole.SOLID)]
    if solid and len(solid) != 2:
        v.append(f"expected exactly 2 solid marker slots, got {len(solid)}")
    elif len(solid) == 2 and text_positions is not None:
        orgs = [layout.origin.get(s) for s in solid]
        if any(o is None for o in orgs):
            v.append("solid marker slot without origin entry")
        else:
            subj = orgs[0].span
            if orgs[1].span != subj:
                v.append("solid marker slots disagree on the subject span")
            elif subj.end <= text_count:
                if layout.slot_position_ids[solid[0]] != text_positions[subj.start] - 1:
                    v.append(
                        f"slot {solid[0]}: subject start marker not directly "
                        f"before token {subj.start}"
                    )
                if layout.slot_position_ids[solid[1]] != text_positions[subj.end] + 1:
                    v.append(
                        f"slot {solid[1]}: subject end marker not directly "
                        f"after token {subj.end}"
                    )

    # Visibility must equal the rule matrix exactly.
    rule = _rule_visibility(roles, layout.partner)
    diff = layout.visibility != rule
    for i, j in zip(*np.nonzero(diff)):
        kind = "visible" if layout.visibility[i, j] else "invisible"
        v.append(
            f"slots ({i}, {j}): {roles_name(roles[i])} slot is {kind} to "
            f"{roles_name(roles[j])} slot, violating the visibility rules"
        )
    return v


def roles_name(value: int) -> str:
    return SlotRole(int(value)).name


def format_layout(layout: EncodingLayout, token_vocab: Optional[TokenVocab] = None) -> str:
    """Plain-text slot table plus 0/1 visibility grid, for golden files."""
    names = {}
    if token_vocab is not None:
        names = {i + 1: t for i, t in enumerate(token_vocab.tokens)}
    lines = ["slot token pos role"]
    for i in range(layout.num_slots):
        tid = int(layout.slot_token_ids[i])
        tok = names.get(tid, f"#{tid}")
        lines.append(
            f"{i:4d} {tok:>8s} {int(layout.slot_position_ids[i]):3d} "
            f"{roles_name(layout.slot_roles[i])}"
        )
    lines.append("visibility")
    for i in range(layout.num_slots):
        lines.append("".join("1" if x else "0" for x in layout.visibility[i]))
    return "\n".join(lines) + "\n"

"""Skeleton topologies, the unified slot layout and the semantic motion codes."""

import numpy as np

from hetskel.semantic import WORDS, motion_codes
from hetskel.synthetic import GeneratorConfig, generate
from hetskel.topology import (
    C17,
    J25,
    SkeletonSequence,
    interpolate_spine,
    slot_map,
    to_unified_slots,
    U30_NAMES,
)

ds = generate(GeneratorConfig(n_classes=4, frames=16), samples_per_class=2, seed=0)
print("3D stream", ds.joints3d.shape, " 2D stream", ds.joints2d.shape, " labels", ds.labels)

# J25 joints land in 25 of the 30 unified slots
slots = slot_map(J25)
for j in (0, 3, 20, 24):
    print(f"J25 {J25.names[j]:>16s} -> slot {slots[j] + 1:2d} ({U30_NAMES[slots[j]]})")

# C17 gains three spine joints by interpolation before it can be mapped
c17 = SkeletonSequence(C17, ds.joints2d[:1])
c20 = interpolate_spine(c17)
print("C17 -> C20:", c17.data.shape, "->", c20.data.shape)
print("interpolated spine joints, frame 0:\n", np.round(c20.array[0, 0, 0, 17:], 3))

partial = to_unified_slots(SkeletonSequence(J25, ds.joints3d[:1]))
print("J25 slots filled:", int(partial.occupied.sum()), "of", len(U30_NAMES))

# one word per joint, axis and frame; frame 0 never moves
codes = motion_codes(ds.joints3d[:1])
hand = J25.names.index("right_hand")
words = np.array(WORDS)[codes[0, 0, :6, hand]]
print(f"{J25.names[hand]} over 6 frames (x, y, z):")
for t, row in enumerate(words):
    print(f"  t={t}: {' '.join(f'{w:>6s}' for w in row)}")

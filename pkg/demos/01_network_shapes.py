"""Walk through the segmentation network's shape arithmetic.

Nothing is trained here; the point is to see which patch sizes the
encoder/decoder accepts and how far a pixel's context reaches.
"""
from vineseg.network import fcn_spec, input_support, nearest_valid_sizes, propagate_shapes, valid_patch_sizes

spec = fcn_spec(608)
shapes = propagate_shapes(spec)
for layer in spec.layers:
    if "/" in layer.name:  # relus keep the shape
        continue
    c, h, w = shapes[layer.name]
    print(f"{layer.name:<10} {layer.kind:<15} {c:>4} x {h:>4} x {w:>4}")

# pooling rounds up, so only some sizes come back at full resolution
print("\nvalid patch sizes up to 1300:", valid_patch_sizes(spec, 1300))
print("nearest to 1000:", nearest_valid_sizes(spec, 1000))

big = propagate_shapes(fcn_spec(1216))
print("1216 chain:", [big[n][1] for n in ("Conv1", "Pool1", "Pool2", "Pool5", "Up-conv1", "Prob")])

# which input rows feed output row 300, and does that context avoid zero padding?
lo, hi, clean = input_support(spec, 608, 300, 300)
print(f"\noutput row 300 reads input rows {lo}..{hi} (padding-free: {clean})")
clean_rows = [u for u in range(608) if input_support(spec, 608, u, u)[2]]
print(f"padding-free output rows in a 608 patch: {clean_rows[0]}..{clean_rows[-1]}")

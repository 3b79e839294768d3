"""Find flowers in a synthetic scene and look at each stage."""
import numpy as np

from vineseg import flowers as F
from vineseg import raster
from vineseg.synthetic import disk_scene

img, truth = disk_scene(7, n=25, width=400, height=400)
print(f"{len(truth)} disks, radii {truth[:, 2].min():.1f} .. {truth[:, 2].max():.1f}")

p = F.DetectorParams()
norm = F.local_contrast_normalize(img, p.lcn_window)
edges = F.canny_edges(norm, p.canny_low, p.canny_high)
print("edge pixels:", edges.count)

acc = F.normalize_votes(F.cht_vote(edges, p))
cands = F.extract_candidates(acc, p.vote_threshold)
print("candidates above threshold:", len(cands))

found = F.select_circles(cands, 400, 400, p.occupancy_factor)
print("after occupancy selection:", len(found))
for c in found[:5]:
    print(f"  center ({c.cx}, {c.cy})  r={c.r}  score={c.score:.2f}")

# a region of interest keeps only flowers centered inside it
roi = np.zeros(img.shape, bool)
roi[:, :200] = True
left = F.detect_flowers(img, roi, p)
print("inside left half:", len(left), "max cx:", max(c.cx for c in left))

rgb = np.repeat(np.rint(img).astype(np.uint8)[..., None], 3, axis=2)
raster.save_image("demo_circles.png", F.draw_circles(rgb, found))
print("wrote demo_circles.png")

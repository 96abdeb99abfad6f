"""Dynamic greedy view selection across different scene layouts.

The same 90% coverage target yields a different number of views per scene:
cluttered rooms need many, open ones need few.  Prints the per-step
coverage curve of each plan.
"""

from mvfusion import (
    BoxSpec,
    CoverageParams,
    RoomSpec,
    SphereSpec,
    SyntheticSpec,
    generate_synthetic_scene,
    select_views,
)

SCENES = [
    SyntheticSpec(
        name="cluttered",
        objects=[
            BoxSpec(center=(-0.55, 0.0, 0.7), size=(0.7, 0.7, 0.7),
                    class_id=1, color=(200, 40, 40)),
            BoxSpec(center=(0.55, 0.0, 0.7), size=(0.7, 0.7, 0.7),
                    class_id=2, color=(40, 200, 40)),
        ],
        room=RoomSpec(size=(4.0, 4.0, 1.6), class_id=0,
                      color=(200, 40, 40), wall_color=(40, 40, 200)),
        camera_count=8, orbit_radius=1.55, orbit_height=1.35,
        look_at=(0.0, 0.0, 0.35), image_width=128, image_height=96,
        focal_px=70.0, point_count=3000,
    ),
    SyntheticSpec(
        name="single-sphere",
        objects=[SphereSpec(center=(0, 0, 0.5), radius=0.45,
                            class_id=1, color=(30, 200, 60))],
        room=RoomSpec(size=(3.0, 3.0, 1.4), class_id=0, color=(170, 170, 170)),
        camera_count=6, orbit_radius=1.1, orbit_height=1.1,
        look_at=(0, 0, 0.3), image_width=128, image_height=96,
        focal_px=60.0, point_count=1500,
    ),
    SyntheticSpec(
        name="open-floor",
        objects=[BoxSpec(center=(0, 0, 0.15), size=(0.8, 0.8, 0.3),
                         class_id=1, color=(220, 220, 40))],
        room=RoomSpec(size=(5.0, 5.0, 1.8), class_id=0, color=(120, 120, 120)),
        camera_count=10, orbit_radius=1.9, orbit_height=1.5,
        look_at=(0, 0, 0.2), image_width=128, image_height=96,
        focal_px=55.0, point_count=2000,
    ),
]

params = CoverageParams(threshold=0.90)
print(f"coverage target {params.threshold:.0%}, "
      f"depth tolerance {params.depth_tolerance * 100:.0f} cm\n")

for seed, spec in enumerate(SCENES):
    scene = generate_synthetic_scene(spec, seed=seed * 31 + 3)
    plan = select_views(scene, params)
    print(f"{spec.name:14s} {len(scene.frames)} candidate views "
          f"-> {len(plan.selected)} selected ({plan.termination})")
    for fid, gain, cov in zip(plan.selected, plan.gain, plan.coverage_after):
        bar = "#" * round(cov * 40)
        print(f"    view {fid}: +{gain:4d} points  {cov:6.1%} {bar}")
    print()

print("the view count adapts to each scene; no layout gets a fixed budget")

#!/usr/bin/env python3
"""
Neural Scene Demo

Generates a two-object dataset, pre-trains briefly and runs the downstream
workflows into a temporary directory. Takes about a minute.

Run: python scripts/demo.py
"""
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from shared.types import Camera
from shared.utils import configure_logging
from tree.M000.src.main import build_tree

DATA = {"num_objects": 2, "num_test_objects": 0, "num_views": 4, "num_grasps": 20, "width": 24, "height": 24,
        "oracle_samples": 64, "grasp_trials": 10, "seed": 1}
TRAIN = {"epochs": 1, "steps_per_epoch": 20, "rays_per_batch": 128, "grasps_per_batch": 8, "num_samples": 16,
         "progress": False, "seed": 1}


def main():
    configure_logging("WARNING")
    print("=" * 60)
    print("Neural Scene Demo")
    print("=" * 60)

    print("\n1. Building tree...")
    root = build_tree()
    print(f"   Root: {root.node_id}")
    print(f"   Left child: {root.left.node_id} (Representation)")
    print(f"   Right child: {root.right.node_id} (Application)")
    leaves = root._collect_all_leaves()
    print(f"   Leaf IDs: {[leaf.node_id for leaf in leaves]}")

    with tempfile.TemporaryDirectory() as tmp:
        base = Path(tmp)

        print("\n2. Generating an analytic dataset...")
        result = root.run_workflow("gen_data", out=base / "data", config=DATA)
        dataset = base / "data" / "dataset"
        print(f"   Scenes: {result['scenes']}, objects: {result['objects']}")

        print("\n3. Pre-training...")
        result = root.run_workflow("pretrain", out=base / "train", dataset=dataset, config=TRAIN)
        checkpoint = base / "train" / "model.ckpt"
        print(f"   Steps: {result['steps']}, latent rows: {result['num_latents']}")

        layout = sorted(dataset.glob("scene_*/layout.yaml"))[0]
        camera = Camera.look_at((0.6, -0.8, 0.3), 32, 32, 15.0)

        print("\n4. Rendering a novel view...")
        result = root.run_workflow("render", out=base / "render", checkpoint=checkpoint, layout=layout,
                                   camera=camera, use_table=True)
        print(f"   Coverage: {result['coverage']:.1%}")

        print("\n5. Proposing grasps...")
        result = root.run_workflow("grasp", out=base / "grasp", checkpoint=checkpoint, layout=layout,
                                   config={"res": 4, "top_k": 5}, use_table=True)
        for object_id, counts in result["objects"].items():
            print(f"   Object {object_id}: {counts['passed']}/{counts['proposals']} passed the gripper tests")

        print("\n6. Voxelizing the scene...")
        result = root.run_workflow("voxelize", out=base / "voxels", checkpoint=checkpoint, layout=layout, res=16,
                                   use_table=True)
        print(f"   Occupied cells: {result['occupied']} ({result['occupied_fraction']:.1%})")

    print("\n7. Workflow history:")
    for record in root.history:
        print(f"   {record.name}: {record.seconds:.2f} s")

    print("\n" + "=" * 60)
    print("Demo complete!")
    print("=" * 60)


if __name__ == "__main__":
    main()

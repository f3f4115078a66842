import os
import sys
import subprocess
import shutil

def run_command(command, cwd=None):
    print(f"🚀 Running: {' '.join(command)}")
    try:
        subprocess.run(command, check=True, cwd=cwd)
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error running command: {e}")
        return False

def setup():
    print("=" * 70)
    print("StreamPoint Project Setup".center(70))
    print("=" * 70)

    # 1. Check for .env
    if not os.path.exists(".env"):
        print("📝 Creating .env from .env.example...")
        if os.path.exists(".env.example"):
            shutil.copy(".env.example", ".env")
        else:
            with open(".env", "w") as f:
                f.write("STREAMPOINT_DATA_DIR=data\nSTREAMPOINT_RUNS_DIR=runs\n")

    # 2. Install dependencies
    print("📦 Installing dependencies...")
    if not run_command([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"]):
        print("❌ Critical Error: Dependency installation failed.")
        sys.exit(1)

    # 3. Generate a small training set
    print("\n🎲 Generating synthetic scenes...")
    if run_command([sys.executable, "Engine/cli.py", "scenegen", "--count", "4", "--frames", "8",
                    "--res", "32", "--out", "data"]):
        print("   ✓ Scenes written to data/")
    else:
        print("   ❌ Critical Error: Scene generation failed")
        sys.exit(1)

    # 4. Smoke run: short training, one streaming pass, evaluation
    print("\n🏋️  Smoke run (20 training steps)...")
    smoke = [
        ["train", "--data", "data", "--steps", "20", "--out", "runs/smoke", "--quiet"],
        ["stream", "--ckpt", "runs/smoke/final.s3r", "--scene", "data/scene_000", "--policy", "window:5",
         "--dump-pred", "runs/smoke/pred", "--stats", "runs/smoke/stats.csv"],
        ["eval", "--scene", "data/scene_000", "--pred", "runs/smoke/pred", "--out", "runs/smoke/metrics.json"],
    ]
    for step in smoke:
        if not run_command([sys.executable, "Engine/cli.py"] + step):
            print(f"   ❌ Smoke run failed at '{step[0]}'")
            sys.exit(1)
    print("   ✓ Metrics written to runs/smoke/metrics.json")

    # 5. Fast test suite
    print("\n🧪 Running tests (slow ones skipped)...")
    if run_command([sys.executable, "-m", "pytest", "-q", "-m", "not slow"]):
        print("   ✓ Tests passed")
    else:
        print("   ⚠️  Some tests failed; see the output above")

    print("\n" + "=" * 70)
    print("Setup Complete!".center(70))
    print("=" * 70)
    print("\nTo train a toy model, run:")
    print(f"   {sys.executable} Engine/cli.py train --data data --steps 2000 --out runs/toy")
    print("\nThen stream a scene through it:")
    print(f"   {sys.executable} Engine/cli.py stream --ckpt runs/toy/final.s3r --scene data/scene_000 "
          "--policy window:5 --dump-pred runs/pred --stats runs/stats.csv")

if __name__ == "__main__":
    setup()

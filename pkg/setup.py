#!/usr/bin/env python3
"""
Setup script for the Hamiltonian learning toolkit.
Installs the CPU build of PyTorch unless a CUDA GPU is detected, then the
remaining numerical stack from requirements.txt.
"""

import subprocess
import sys
from pathlib import Path

CPU_INDEX = "https://download.pytorch.org/whl/cpu"


def check_gpu_available():
    """Check if a CUDA GPU is available for PyTorch."""
    try:
        import torch  # type: ignore

        return torch.cuda.is_available()
    except ImportError:
        # If torch is not installed yet, ask the driver directly
        try:
            result = subprocess.run(
                ["nvidia-smi"], capture_output=True, text=True, timeout=5
            )
            return result.returncode == 0
        except (subprocess.TimeoutExpired, FileNotFoundError):
            return False


def requirement_lines():
    """Requirements other than torch, in file order."""
    path = Path(__file__).parent / "requirements.txt"
    lines = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#") and not line.startswith("torch"):
            lines.append(line)
    return lines


def pip_install(*args):
    subprocess.check_call([sys.executable, "-m", "pip", "install", *args])


def install_requirements():
    """Install requirements with GPU-aware PyTorch selection."""
    gpu_available = check_gpu_available()

    print(f"GPU detected: {gpu_available}")

    # Framework build based on GPU availability
    if gpu_available:
        torch_args = ["torch>=2.1.0"]
        print("Installing default (CUDA) PyTorch build...")
    else:
        torch_args = ["torch>=2.1.0", "--index-url", CPU_INDEX]
        print("Installing CPU-only PyTorch build...")

    steps = [torch_args] + [[package] for package in requirement_lines()]

    for args in steps:
        print(f"Installing {args[0]}...")
        try:
            pip_install(*args)
            print(f"✓ {args[0]} installed successfully")
        except subprocess.CalledProcessError as e:
            print(f"✗ Failed to install {args[0]}: {e}")
            return False

    print("\n✓ All dependencies installed successfully!")
    return True


if __name__ == "__main__" and len(sys.argv) > 1:
    # Invoked by a build frontend (pip / setuptools): metadata lives in pyproject.toml
    from setuptools import setup

    setup()
elif __name__ == "__main__":
    # Check if virtual environment is active
    if hasattr(sys, "real_prefix") or (
        hasattr(sys, "base_prefix") and sys.base_prefix != sys.prefix
    ):
        print("✓ Virtual environment detected")
    else:
        print(
            "⚠ Warning: No virtual environment detected. It's recommended to use a virtual environment."
        )

    # Install dependencies
    success = install_requirements()

    if success:
        print("\n🎉 Setup complete! Run: PYTHONPATH=src python -m hamiltonian_learning --help")
    else:
        print("\n❌ Setup failed. Please check the error messages above.")
        sys.exit(1)

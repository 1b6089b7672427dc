#!/usr/bin/env python3
"""
Startup script for the convex integration engine
Supports different environments: development, production
"""
import sys

from config import ENVIRONMENT, get_runtime_config
from cli_runner import main as cli_main


def main():
    """Main startup function"""
    runtime = get_runtime_config()
    print(f"🚀 Starting seci in {ENVIRONMENT} mode")
    print(f"🧵 FFT workers: {runtime['threads']}")
    print(f"📁 Output: {runtime['output_dir']}")
    print(f"🐛 Log level: {runtime['log_level']}")
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())

"""Main entry point for mesh3d-bench."""

from .cli import main

if __name__ == "__main__":
    main()

"""python -m manifold_sde <subcommand> ..."""
from manifold_sde.cli import main

raise SystemExit(main())

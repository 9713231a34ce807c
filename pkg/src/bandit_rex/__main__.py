from bandit_rex.cli import main

raise SystemExit(main())

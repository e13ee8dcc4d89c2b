from stemkg.cli import main

raise SystemExit(main())

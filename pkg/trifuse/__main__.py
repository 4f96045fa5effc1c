from trifuse.main import main

raise SystemExit(main())

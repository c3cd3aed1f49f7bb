from nodalgfk.cli import main
import sys
sys.exit(main())

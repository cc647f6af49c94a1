import sys

from bipnet.run_models import main

sys.exit(main())

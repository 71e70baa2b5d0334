import logging
import sys

from config import LOG_LEVEL
from cli import run

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger('diffcap')


if __name__ == '__main__':
    sys.exit(run(sys.argv[1:]))

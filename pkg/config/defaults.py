# Default Simulation Parameters
#
# These values are used whenever an experiment file or a command-line flag
# does not say otherwise. Experiment files live in config/experiments/.
#
# Time is measured in slots everywhere: one slot is the time a node needs to
# serve (transmit) one packet.

# Number of slots simulated per grid cell
DEFAULT_HORIZON = 50_000

# Share of the horizon discarded before averaging packet delays
WARMUP_FRACTION = 0.1

# Number of packets each message is divided into
DEFAULT_K = 4

# Bytes per source packet (x_1..x_K all share this length)
PAYLOAD_SIZE = 16

# queues.csv keeps one row per node every N slots
QUEUE_SAMPLE_EVERY = 100

# Random topologies: how often to resample before giving up on connectivity
MAX_TOPOLOGY_RETRIES = 100

# Random topology defaults (not claimed to match any published setup)
DEFAULT_EDGE_PROBABILITY = 0.15
DEFAULT_WEIGHT_MEAN = 2.0
DEFAULT_WEIGHT_STDDEV = 1.0

# GF(2^8) reduction polynomial x^8 + x^4 + x^3 + x + 1
FIELD_POLYNOMIAL = "x^8 + x^4 + x^3 + x + 1"

# A queue-growth probe needs at least this many slots
MIN_PROBE_HORIZON = 1000

# Output directory when neither --out nor RNCSIM_OUTPUT_DIR is given
DEFAULT_OUTPUT_DIR = "results"

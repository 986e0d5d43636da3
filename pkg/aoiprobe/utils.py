import logging

# Every module logger hangs under this one, so a single setLevel() controls the solvers and the simulator
LOGGER_ROOT = "aoiprobe"


def getLogger(name: str) -> logging.Logger:
    "Logger of a module: 'aoiprobe.<last dotted component of name>'"
    return logging.getLogger(f"{LOGGER_ROOT}.{name.rpartition('.')[2]}")


def parse_number_list(s: str, type_=float) -> list:
    """Parses a comma-separated list, e.g. '0.2,0.4, 0.6'"""
    items = [x.strip() for x in s.split(",")]
    if not all(items):
        raise ValueError(f"Cannot parse '{s}': expected a comma-separated list of numbers")
    return [type_(x) for x in items]

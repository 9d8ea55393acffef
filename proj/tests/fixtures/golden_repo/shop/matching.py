# expect: match statement parsed; soft keywords usable as names
import json


def route(command):
    match command.split():
        case ["load", path]:
            return json.load(open(path))
        case ["dump", *rest] if rest:
            return json.dumps(rest)
        case {"op": op, **kw}:
            return op
        case _:
            match = case = None
            return match, case

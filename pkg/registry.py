"""
Named entries (problem generators, operator builders) that can be called from a text spec such as
`gaussian:sigma=2.0,size=64x64,boundary=periodic`.

    spec   = name , [ ":" , param , { "," , param } ] ;
    param  = key , "=" , scalar ;
    scalar = number | size | word ;
    size   = integer , "x" , integer ;
"""
import inspect
import re
from typing import Any, Callable, List, Optional, Tuple


class SpecError(ValueError):
    """
    Raised for a malformed spec or parameters that do not fit the entry's signature.
    """


# Custom class to wrap registered functions
class Entry:
    def __init__(self, func: Callable, name: Optional[str] = None):
        self.func = func
        self.name = name or func.__name__
        self.signature = inspect.signature(func)
        self.docstring = inspect.getdoc(func)

    def __call__(self, *args, **kwargs):
        return self.func(*args, **kwargs)

    def __str__(self):
        summary = self.docstring.splitlines()[0] if self.docstring else ""
        return f"{self.name}{self.signature} - {summary}"

    def __repr__(self):
        return f"{self.name}{self.signature}"


# Decorator to register a function, optionally under another name
def entry(func: Optional[Callable] = None, *, name: Optional[str] = None):
    if func is None:
        return lambda f: Entry(f, name)
    return Entry(func, name)


def entries_to_string(entries: List[Entry]) -> str:
    return "\n".join(str(e) for e in entries)


def entries_to_dict(entries: List[Entry]) -> dict:
    return {e.name: e for e in entries}


_INT = re.compile(r"[+-]?\d+")
_FLOAT = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_SIZE = re.compile(r"(\d+)[xX](\d+)")
_KEY = re.compile(r"[A-Za-z_]\w*")
_NAME = re.compile(r"[A-Za-z_][\w\-]*")


def parse_scalar(text: str) -> Any:
    text = text.strip()
    if _INT.fullmatch(text):
        return int(text)
    if _FLOAT.fullmatch(text):
        return float(text)
    size = _SIZE.fullmatch(text)
    if size:
        return int(size.group(1)), int(size.group(2))
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_spec(spec: str) -> Tuple[str, dict]:
    """
    Split 'name:key=value,...' into the name and a dict of parsed scalars.
    """
    name, _, params = spec.strip().partition(":")
    name = name.strip()
    if not _NAME.fullmatch(name):
        raise SpecError(f"Invalid spec '{spec}': expected a name before ':'.")

    kwargs = {}
    if params.strip():
        for param in params.split(","):
            key, sep, value = param.partition("=")
            key = key.strip()
            if not sep or not _KEY.fullmatch(key) or not value.strip():
                raise SpecError(f"Invalid parameter '{param.strip()}' in spec '{spec}'. Use key=value.")
            if key in kwargs:
                raise SpecError(f"Parameter '{key}' given twice in spec '{spec}'.")
            kwargs[key] = parse_scalar(value)
    return name, kwargs


# Function to verify that a call matches the signature
def verify_call(e: Entry, args: Tuple[Any, ...] = (), kwargs: Optional[dict] = None) -> bool:
    try:
        e.signature.bind(*args, **(kwargs or {}))
        return True
    except TypeError:
        return False


def call_spec(spec: str, entries: dict, *args, **overrides) -> Any:
    """
    Look up the entry named by the spec and call it with the positional args and the spec's parameters
    (explicit overrides win).
    """
    name, kwargs = parse_spec(spec)
    if name not in entries:
        raise SpecError(f"Unknown name '{name}'. Available:\n{entries_to_string(list(entries.values()))}")
    kwargs.update(overrides)
    e = entries[name]
    if not verify_call(e, args, kwargs):
        raise SpecError(f"Invalid parameters for {e!r}: {kwargs}")
    return e(*args, **kwargs)

"""Languages known to the command-line tools.

Each entry builds a :class:`~oi.lang.LanguageSpec` from ``key=value``
options given with ``-o`` on the command line.
"""

from __future__ import annotations


def _minijs(options):
    from oi.minijs import minijs_spec
    unknown = set(options) - {"instance", "add"}
    if unknown:
        raise ValueError("unknown minijs option(s): %s (known: instance, add)" % ", ".join(sorted(unknown)))
    return minijs_spec(options.get("instance", "hashmap"), options.get("add", "default"))


LANGUAGES = {"minijs": _minijs}


def available():
    return sorted(LANGUAGES)


def load_language(name, options=None):
    """The LanguageSpec of language ``name``; raises KeyError for unknown names and
    ValueError for bad options."""
    try:
        factory = LANGUAGES[name]
    except KeyError:
        raise KeyError("unknown language %r; available: %s" % (name, ", ".join(available()))) from None
    return factory(dict(options or {}))

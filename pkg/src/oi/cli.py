"""Command-line entry point ``oi``.

    oi run minijs prog.mjs [--port 7001 --name calc] [-o instance=arraylike]
    oi agent script.nda --target calc
    oi debug --target calc
    oi inspect minijs [prog.mjs]

Exit codes: 0 success, 1 usage error, 2 runtime error (program, script or
reflective request failed), 3 protocol error (target missing, connection lost).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PROTOCOL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _options(pairs):
    out = {}
    for p in pairs or ():
        key, sep, value = p.partition("=")
        if not sep or not key:
            raise ValueError("language option %r is not key=value" % p)
        out[key] = value
    return out


def _read(path):
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise FileNotFoundError("cannot read %s: %s" % (path, e.strerror)) from None


def _connect(target, timeout):
    from oi.wire import AgentClient, Registry, RegistryError
    try:
        return AgentClient.connect(target, Registry(), timeout=timeout)
    except RegistryError as e:
        raise ConnectionError(str(e)) from None


def cmd_run(args):
    from oi.languages import load_language
    from oi.vm import run_program
    try:
        spec = load_language(args.language, _options(args.option))
    except KeyError as e:
        print("oi: %s" % e.args[0], file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print("oi: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    source = _read(args.program)
    if args.name and args.port is None:
        args.port = 0

    def on_ready(vm, server):
        if server is not None:
            print("oi: serving on %s:%d%s" % (server.host, server.port,
                                              " as %s" % args.name if args.name else ""), file=sys.stderr)
    try:
        report = run_program(spec, source, port=args.port, name=args.name, echo=sys.stdout,
                             wait_agents=args.wait_agents, linger=args.linger,
                             linger_timeout=args.linger_timeout, on_ready=on_ready)
    except BrokenPipeError:
        raise
    except OSError as e:
        print("oi: cannot serve on port %s: %s" % (args.port, e.strerror or e), file=sys.stderr)
        return EXIT_PROTOCOL
    if report.error:
        print(report.error, file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_agent(args):
    from oi.muda import MudaError, parse_script, run_script
    from oi.wire import RemoteError
    try:
        script = parse_script(_read(args.script))
    except MudaError as e:
        print("%s: %s" % (args.script, e), file=sys.stderr)
        return EXIT_USAGE
    client = _connect(args.target, args.timeout)
    try:
        run_script(script, client)
    except MudaError as e:
        print("%s: %s" % (args.script, e), file=sys.stderr)
        return EXIT_RUNTIME
    except RemoteError as e:
        print("%s: interpreter refused: %s" % (args.script, e), file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        client.close()
    return EXIT_OK


def cmd_debug(args):
    from oi.debugger import DebugSession
    client = _connect(args.target, args.timeout)
    return DebugSession(client).run()


def cmd_inspect(args):
    from oi.mop import NodeInfo
    from oi.debugger import format_tree
    if args.target:
        client = _connect(args.target, args.timeout)
        try:
            print("\n".join(format_tree(NodeInfo.from_dict(client.mop("getTree")))))
        finally:
            client.close()
        return EXIT_OK
    if not args.language:
        print("oi inspect: give a language or --target", file=sys.stderr)
        return EXIT_USAGE
    from oi.languages import load_language
    from oi.parser import AmbiguityError, LexError, ParseError, dump_tree, parse_source
    try:
        spec = load_language(args.language, _options(args.option))
    except (KeyError, ValueError) as e:
        print("oi: %s" % (e.args[0] if isinstance(e, KeyError) else e), file=sys.stderr)
        return EXIT_USAGE
    program = args.tree or args.program
    if program is None:
        print(spec.dump())
        return EXIT_OK
    try:
        tree = parse_source(_read(program), spec)
    except (LexError, ParseError, AmbiguityError) as e:
        print("%s: %s" % (program, e), file=sys.stderr)
        return EXIT_RUNTIME
    print(dump_tree(tree))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="oi", description="Open interpreters: run programs and adapt them while they run.")
    p.add_argument("-v", "--verbose", action="store_true", help="log protocol activity")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a program, optionally serving agents")
    r.add_argument("language")
    r.add_argument("program")
    r.add_argument("--port", type=int, help="serve the agent protocol on this port (0 picks one)")
    r.add_argument("--name", help="publish the interpreter in the registry under this name")
    r.add_argument("--wait-agents", type=int, default=0, metavar="N",
                   help="start only after N agents announced they are ready")
    r.add_argument("--linger", action="store_true",
                   help="after the program ends keep serving until agents disconnect")
    r.add_argument("--linger-timeout", type=float, default=None, metavar="SECONDS")
    r.add_argument("-o", "--option", action="append", metavar="KEY=VALUE", help="language option")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("agent", help="run a µDA script against a running interpreter")
    a.add_argument("script")
    a.add_argument("--target", required=True, help="registry name of the interpreter")
    a.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for each reply")
    a.set_defaults(func=cmd_agent)

    d = sub.add_parser("debug", help="attach the interactive debugger")
    d.add_argument("--target", required=True)
    d.add_argument("--timeout", type=float, default=30.0)
    d.set_defaults(func=cmd_debug)

    i = sub.add_parser("inspect", help="show a language's structure or a program's tree")
    i.add_argument("language", nargs="?")
    i.add_argument("program", nargs="?", help="print this program's parse tree")
    i.add_argument("--tree", metavar="PROGRAM", help="same as giving the program positionally")
    i.add_argument("--target", help="show the tree of a running interpreter instead")
    i.add_argument("--timeout", type=float, default=30.0)
    i.add_argument("-o", "--option", action="append", metavar="KEY=VALUE")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except BrokenPipeError:  # output piped into e.g. head
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except FileNotFoundError as e:
        print("oi: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    except ConnectionError as e:
        print("oi: %s" % e, file=sys.stderr)
        return EXIT_PROTOCOL
    except ValueError as e:
        print("oi: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

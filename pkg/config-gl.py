#!/usr/bin/env python3
"""
Helper for writing scenario files and the gl.env settings file.

What it does:
- Interactively prompt for the common scenario keys with defaults and save them
  as KEY=VALUE text (default scenarios/custom.env).
- Or write them non-interactively from KEY=VALUE arguments.
- With --settings, do the same for the GL_* process settings in gl.env, which
  gl_cli.py loads automatically when present (environment variables win).

Usage:
  python3 config-gl.py                                  # interactive, writes scenarios/custom.env
  python3 config-gl.py --out scenarios/ring.env
  python3 config-gl.py --non-interactive domain.cells=96 params.kappa=10,20 params.sigma=0.5
  python3 config-gl.py --settings                       # interactive, writes gl.env
  python3 config-gl.py --settings --non-interactive GL_WORKERS=4 GL_LOG_LEVEL=DEBUG

Notes:
- Scenario values are checked with the same reader gl_cli.py uses; an invalid
  value exits with code 2 and names the key.
"""
import os
import sys
from pathlib import Path

from scenario import ENV_FILE, REPO_DIR, ConfigError, Scenario, load_kv_file, parse_kv_args, scenario_keys

SCENARIO_FILE = REPO_DIR / 'scenarios' / 'custom.env'

SCENARIO_DEFAULTS = {
    'domain.shape': 'square',
    'domain.size': '1',
    'domain.center': '0.5,0.5',
    'domain.cells': '64',
    'pinning.family': 'constant',
    'pinning.value': '1',
    'field.family': 'constant',
    'field.value': '1',
    'params.kappa': '10,20,40',
    'params.sigma': '0.5',
    'params.H': '',
}

# Keys we support (order matters for prompt)
SETTINGS_KEYS = [
    'GL_WORKERS',     # processes for sweeps
    'GL_SEED',        # RNG seed
    'GL_OUTPUT_DIR',  # artifacts root
    'GL_CACHE_DIR',   # spectral cache and f-hat table
    'GL_LOG_LEVEL',   # DEBUG/INFO/WARNING
    'GL_FHAT_TABLE',  # optional precomputed f-hat CSV
]

SETTINGS_DEFAULTS = {
    'GL_WORKERS': '1',
    'GL_SEED': '1234',
    'GL_OUTPUT_DIR': 'out',
    'GL_CACHE_DIR': '.gl-cache',
    'GL_LOG_LEVEL': 'INFO',
    'GL_FHAT_TABLE': '',
}


def write_kv_file(path: Path, keys, values: dict):
    lines = ['# Saved by config-gl.py']
    ordered = list(keys) + sorted(k for k in values if k not in keys)
    for k in ordered:
        if values.get(k, '') != '':
            lines.append(f'{k}={values[k]}')
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(lines) + '\n')
    print(f"Wrote {path}")


def interactive_setup(path: Path, keys, defaults: dict, title: str):
    print(f"{title} (press Enter to accept defaults, '-' to leave a key unset).\n")
    existing = load_kv_file(path)
    values = {}
    for k in keys:
        default = existing.get(k, os.getenv(k, defaults.get(k, '')))
        val = input(f"{k} [{default}]: ").strip()
        if not val:
            val = default
        if val == '-':
            val = ''
        values[k] = val
    return values


def check_scenario(values: dict) -> bool:
    try:
        Scenario.from_values({k: v for k, v in values.items() if v != ''})
    except ConfigError as exc:
        print(f"Invalid scenario: {exc}")
        return False
    return True


def main():
    args = sys.argv[1:]
    settings = '--settings' in args
    if settings:
        path, keys, defaults, title = ENV_FILE, SETTINGS_KEYS, SETTINGS_DEFAULTS, "Process settings"
    else:
        path, keys, defaults, title = SCENARIO_FILE, scenario_keys(), SCENARIO_DEFAULTS, "Scenario"
    if '--out' in args:
        idx = args.index('--out')
        if idx + 1 >= len(args):
            print("--out needs a path")
            sys.exit(2)
        path = Path(args[idx + 1])
        args = args[:idx] + args[idx + 2:]

    if '--non-interactive' in args:
        idx = args.index('--non-interactive')
        try:
            values = parse_kv_args(a for a in args[idx + 1:] if a != '--settings')
        except ConfigError as exc:
            print(f"Bad argument: {exc}")
            sys.exit(2)
        if not values:
            print("No KEY=VALUE pairs provided after --non-interactive")
            sys.exit(2)
    else:
        values = interactive_setup(path, keys, defaults, title)

    if not settings and not check_scenario(values):
        sys.exit(2)
    write_kv_file(path, keys, values)
    if settings:
        print("Done. gl_cli.py loads gl.env automatically if present.")
    else:
        print(f"Done. Run with: python3 gl_cli.py <command> --scenario {path}")


if __name__ == '__main__':
    main()

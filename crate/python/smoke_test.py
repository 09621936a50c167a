"""Smoke test for the fabric_py extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
Run:                      python3 python/smoke_test.py
"""

import json
import pathlib
import sys

import fabric_py

ROOT = pathlib.Path(__file__).resolve().parent.parent
CORPUS = ROOT / "crates" / "core" / "conformance"
NOW = 1_535_810_400
EDT = -4 * 3600


def golden(name):
    return (CORPUS / name).read_text()


def check(label, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {label} {detail}".rstrip())
    return ok


def main():
    results = []

    results.append(check("tbp_duration", fabric_py.tbp_duration(1_000_000, 5000) == 1600))

    for case in ("intent", "query", "tbp"):
        doc = golden(f"{case}/request.json")
        results.append(check(f"canonical {case}", fabric_py.canonical_intent(doc) == doc))

    fab = fabric_py.Fabric("baseline8")
    results.append(check("baseline8 size", len(fab.domains) == 8, f"{fab.node_count} nodes, {fab.link_count} links"))
    results.append(
        check("golden design", fab.design(golden("intent/request.json"), NOW, EDT) == golden("intent/response.json"))
    )

    q = fabric_py.Fabric("baseline8")
    q.occupy("urn:ogf:network:es.net:2013:sunn:to-cenic.net", 90_000, NOW, NOW + 86_400)
    got = q.answer(golden("query/request.json"), NOW, EDT)
    results.append(check("golden max-bandwidth", got == golden("query/response.json")))

    t = fabric_py.Fabric("baseline8")
    t.occupy("urn:ogf:network:cenic.net:2013:lax:to-es.net", 95_000, NOW, NOW + 2 * 86_400)
    got = t.answer(golden("tbp/request.json"), NOW, EDT)
    options = json.loads(got)["queries"][0]["options"]
    results.append(check("golden tbp", got == golden("tbp/response.json"), f"{options['bandwidth']} mbps until {options['end']}"))

    s = fabric_py.Fabric("scaleout67", seed=7)
    graph = json.loads(s.graph())
    results.append(check("scaleout67 size", len(s.domains) == 67 and s.node_count >= 92 and s.link_count >= 200))
    results.append(check("graph dump", len(graph["nodes"]) == s.node_count))

    try:
        fab.answer("{}", NOW)
        results.append(check("malformed intent raises", False))
    except ValueError as e:
        results.append(check("malformed intent raises", True, type(e).__name__))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())

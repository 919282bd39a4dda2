#!/usr/bin/env python3
"""Writes the replay-log fixtures in this directory.

Deterministic: fixed seeds and fixed timestamps, so rerunning reproduces
the committed files byte for byte.
"""

import hashlib
import json
import os
import random
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
STARTED = "2025-01-15T10:00:00Z"
TOOL = "bomtrace/1.0.0"
KEY_ORDER = ["v", "ts", "kind", "pid", "ppid", "comm", "path", "mode", "argv", "env", "sha256", "dropped"]


def sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def content_digest(path, generation=0):
    return sha("fixture content %s #%d" % (path, generation))


def line(obj):
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def event(ts, kind, pid, comm, **fields):
    e = {"v": 1, "ts": ts, "kind": kind, "pid": pid, "comm": comm}
    e.update({k: v for k, v in fields.items() if v is not None})
    return {k: e[k] for k in KEY_ORDER if k in e}


def write_log(name, events, summary=True, started=STARTED):
    path = os.path.join(HERE, name)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(line({"v": 1, "kind": "header", "started": started, "tool": TOOL}) + "\n")
        for e in events:
            f.write(line(e) + "\n")
        if summary:
            dropped = sum(e.get("dropped", 0) for e in events)
            f.write(line({"v": 1, "kind": "summary", "events": len(events), "dropped": dropped}) + "\n")
    return path


def permute_within_runs(events, rng):
    """Shuffles each run of equal-ts events; ts order is preserved."""
    out, run = [], []
    for e in events:
        if run and run[0]["ts"] != e["ts"]:
            rng.shuffle(run)
            out.extend(run)
            run = []
        run.append(e)
    rng.shuffle(run)
    out.extend(run)
    return out


# Go toolchain sample: 12 open events over 5 .go, 2 .so, 1 .s, 4 other.

KNOWN_DIGESTS = {
    "/go-source/src/internal/platform/supported.go": "fe8b88d8b412ba7119e6f37a00415faec9923b7f379561330dadfb4758b43c4b",
    "/usr/lib/gcc/aarch64-linux-gnu/11/libgcc_s.so": "69a56a9993b7729b29b274e65016031c81f2397f176ed5ad44d59bd50425e0bd",
    "/go-source/src/runtime/rt0_openbsd_arm.s": "b89ee998ebe14d1f69ede3dfd3e698c5844b6379b81d206aa5d76ca0f20644f3",
}


def digest_for(path):
    return KNOWN_DIGESTS.get(path) or content_digest(path)


def go_sample():
    root_env = [
        "PATH=/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin:/usr/local/go/bin:/go/bin",
        "HOSTNAME=37ef788854ed",
        "GOPATH=/go",
        "HOME=/root",
        "", "", "", "", "", "",
    ]
    dist_env = [
        "HOSTNAME=37ef788854ed",
        "GOROOT_BOOTSTRAP=/usr/local/go",
        "HOME=/root",
        "DIST_UNMODIFIED_PATH=/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin:/usr/local/go/bin:/go/bin",
        "GOROOT=/usr/local/go",
        "SHLVL=1",
        "PATH=/go-source/bin:/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin:/usr/local/go/bin:/go/bin",
        "GOPATH=/go-source/pkg/bootstrap",
        "_=./cmd/dist/dist",
        "TERM=dumb",
    ]
    tool_env = ["HOME=/root", "GOROOT=/go-source", "GOARCH=arm64"]

    def rd(ts, pid, comm, path):
        return event(ts, "open", pid, comm, path=path, mode="r", sha256=digest_for(path))

    ev = [
        event(1000, "exec", 81530, "runc:[2:INIT]", ppid=81529, argv=["./make.bash"], env=root_env),
        event(2000, "fork", 82207, "make.bash", ppid=81530),
        event(2500, "exec", 82207, "dist", ppid=81530,
              argv=["/usr/local/go/bin/go", "install", "-tags=math_big_pure_go", "compiler_bootstrap",
                    "purego", "bootstrap/cmd/..."],
              env=dist_env),
        rd(3000, 82207, "go", "/go-source/VERSION"),
        event(4000, "fork", 90421, "go", ppid=82207),
        event(4000, "fork", 93814, "go", ppid=82207),
        event(4000, "fork", 93844, "go", ppid=82207),
        event(4500, "exec", 90421, "go", ppid=82207,
              argv=["gcc", "-shared", "-o", "/tmp/go-build/libruntime_cgo.so"], env=tool_env),
        event(4500, "exec", 93814, "go", ppid=82207,
              argv=["/go-source/pkg/tool/linux_arm64/asm", "-p", "runtime", "rt0_openbsd_arm.s"], env=tool_env),
        event(4500, "exec", 93844, "go", ppid=82207,
              argv=["/go-source/pkg/tool/linux_arm64/compile", "-p", "internal/platform"], env=tool_env),
        rd(5000, 90421, "gcc", "/etc/ld.so.cache"),
        rd(5000, 93814, "asm", "/go-source/src/runtime/rt0_openbsd_arm.s"),
        rd(5000, 93844, "compile", "/go-source/src/internal/platform/supported.go"),
        rd(5100, 90421, "gcc", "/lib/aarch64-linux-gnu/libc.so.6"),
        rd(5100, 93844, "compile", "/go-source/src/internal/platform/zosarch.go"),
        rd(5200, 90421, "gcc", "/usr/lib/gcc/aarch64-linux-gnu/11/libgcc_s.so"),
        rd(5200, 93844, "compile", "/go-source/src/go.mod"),
        rd(5300, 93844, "compile", "/go-source/src/runtime/proc.go"),
        rd(5300, 93844, "compile", "/go-source/src/os/file.go"),
        rd(5300, 93844, "compile", "/go-source/src/fmt/print.go"),
        event(6000, "exit", 90421, "gcc", ppid=82207),
        event(6000, "exit", 93814, "asm", ppid=82207),
        event(6000, "exit", 93844, "compile", ppid=82207),
        event(7000, "open", 82207, "go", path="/go-source/pkg/tool/linux_arm64/compile", mode="w",
              sha256=content_digest("/go-source/pkg/tool/linux_arm64/compile")),
        event(8000, "exit", 82207, "go", ppid=81530),
        event(9000, "exit", 81530, "make.bash", ppid=81529),
    ]
    assert sum(1 for e in ev if e["kind"] == "open") == 12
    return ev


# Small hello-world build with a compiler pipeline, an intermediate file,
# and secrets in the environment.

def hello_build(hello_generation=0, extra_cc=False, extra_path=False):
    env = ["PATH=/usr/bin:/bin", "HOME=/home/builder", "GITHUB_TOKEN=ghp_example", "CC=cc"]
    ev = [
        event(100, "exec", 100, "bash", ppid=1, argv=["make", "hello"], env=env),
        event(200, "fork", 101, "make", ppid=100),
        event(300, "exec", 101, "make", ppid=100, argv=["cc", "-o", "hello", "hello.c"], env=env),
        event(400, "open", 101, "cc", path="/src/hello.c", mode="r",
              sha256=content_digest("/src/hello.c", hello_generation)),
        event(410, "open", 101, "cc", path="/usr/include/stdio.h", mode="r",
              sha256=content_digest("/usr/include/stdio.h")),
        event(500, "open", 101, "cc", path="/tmp/cc1.s", mode="w", sha256=content_digest("/tmp/cc1.s")),
        event(600, "fork", 102, "cc", ppid=101),
        event(650, "exec", 102, "cc", ppid=101, argv=["as", "-o", "/tmp/cc1.o", "/tmp/cc1.s"], env=env),
        event(700, "open", 102, "as", path="/tmp/cc1.s", mode="r", sha256=content_digest("/tmp/cc1.s")),
        event(710, "open", 102, "as", path="/tmp/cc1.o", mode="w", sha256=content_digest("/tmp/cc1.o")),
        event(800, "exit", 102, "as", ppid=101),
        event(900, "open", 101, "cc", path="/usr/lib/x86_64-linux-gnu/libc.so.6", mode="r",
              sha256=content_digest("/usr/lib/x86_64-linux-gnu/libc.so.6")),
        event(910, "open", 101, "cc", path="/tmp/cc1.o", mode="r", sha256=content_digest("/tmp/cc1.o")),
        event(920, "open", 101, "cc", path="/src/hello", mode="w", sha256=content_digest("/src/hello")),
        event(1000, "exit", 101, "cc", ppid=100),
    ]
    if extra_path:
        ev.insert(5, event(420, "open", 101, "cc", path="/new.c", mode="r", sha256=content_digest("/new.c")))
    if extra_cc:
        ev += [
            event(1100, "fork", 103, "make", ppid=100),
            event(1200, "exec", 103, "make", ppid=100, argv=["cc", "-c", "extra.c"], env=env),
            event(1300, "exit", 103, "cc", ppid=100),
        ]
    ev.append(event(2000, "exit", 100, "make", ppid=1))
    return ev


def flat_reads(paths, pid=10, digest=None):
    ev = [event(1, "exec", pid, "sh", ppid=1, argv=["build"], env=["PATH=/bin"])]
    for i, p in enumerate(paths):
        ev.append(event(10 + i, "open", pid, "build", path=p, mode="r",
                        sha256=(digest or content_digest)(p)))
    ev.append(event(10 + len(paths), "exit", pid, "build", ppid=1))
    return ev


# Synthetic build: 2,000 events with many equal-ts runs, versioned
# files, unhashable opens, and drop events.

def synthetic(total=2000, seed=20240917):
    rng = random.Random(seed)
    exts = [".go", ".c", ".h", ".s", ".so", ".so.6", ".txt", "", ".mod", ".o"]
    dirs = ["/src", "/src/lib", "/src/cmd/tool", "/usr/include", "/usr/lib/x86_64-linux-gnu", "/tmp/build"]
    files = []
    for i in range(260):
        ext = exts[i % len(exts)]
        files.append("%s/file%03d%s" % (dirs[i % len(dirs)], i, ext))
    generation = {f: 0 for f in files}

    ev = []
    ts = 1000
    live = [500]
    ev.append(event(ts, "exec", 500, "sh", ppid=1, argv=["./build.sh"], env=["PATH=/bin", "SECRET_KEY=abc"]))
    next_pid = 501
    while len(ev) < total - 1:
        ts += rng.choice([0, 0, 0, 1, 1, 5, 10])
        r = rng.random()
        if r < 0.06 and len(live) < 12:
            parent = rng.choice(live)
            pid = next_pid
            next_pid += 1
            ev.append(event(ts, "fork", pid, "sh", ppid=parent))
            ev.append(event(ts, "exec", pid, "sh", ppid=parent,
                            argv=["cc", "-c", "unit%d.c" % pid], env=["PATH=/bin", "PWD=/src"]))
            live.append(pid)
        elif r < 0.10 and len(live) > 1:
            pid = rng.choice(live[1:])
            live.remove(pid)
            ev.append(event(ts, "exit", pid, "cc"))
        elif r < 0.12:
            ev.append(event(ts, "drop", 0, "", dropped=rng.randint(1, 9)))
        else:
            pid = rng.choice(live)
            path = rng.choice(files)
            mode = rng.choice(["r", "r", "r", "r", "w", "rw"])
            if mode != "r" and rng.random() < 0.5:
                generation[path] += 1
            digest = None if rng.random() < 0.03 else content_digest(path, generation[path])
            ev.append(event(ts, "open", pid, "cc", path=path, mode=mode, sha256=digest))
    ev = ev[: total - 1]
    ev.append(event(ts + 100, "exit", 500, "sh", ppid=1))
    assert len(ev) == total
    return ev


def main():
    go = go_sample()
    write_log("go_sample.jsonl", go)
    write_log("go_sample_permuted.jsonl", permute_within_runs(go, random.Random(7)))
    full = open(os.path.join(HERE, "go_sample.jsonl"), encoding="utf-8").read()
    lines = full.splitlines(keepends=True)
    # Cut in the middle of line 10 (header is line 1).
    cut = "".join(lines[:9]) + lines[9][: len(lines[9]) // 2]
    with open(os.path.join(HERE, "go_sample_truncated.jsonl"), "w", encoding="utf-8", newline="\n") as f:
        f.write(cut)

    write_log("hello_build.jsonl", hello_build())
    write_log("hello_build_changed.jsonl", hello_build(hello_generation=1))
    write_log("hello_build_added.jsonl", hello_build(extra_path=True))
    write_log("hello_build_extra_cc.jsonl", hello_build(extra_cc=True))

    write_log("leaves16.jsonl", flat_reads(["/src/f%02d.c" % i for i in range(16)]))
    write_log("components10.jsonl", flat_reads(["/pkg/c%d.h" % i for i in range(10)]))
    write_log("five.jsonl", flat_reads(["/a", "/b", "/c", "/d", "/e"], digest=sha))

    syn = synthetic()
    write_log("synthetic2000.jsonl", syn)
    write_log("synthetic2000_permuted.jsonl", permute_within_runs(syn, random.Random(99)))

    write_log("empty.jsonl", [])
    write_log("dropped17.jsonl", [
        event(10, "exec", 7, "sh", ppid=1, argv=["true"], env=[]),
        event(20, "drop", 0, "", dropped=17),
        event(30, "exit", 7, "true", ppid=1),
    ])
    write_log("decreasing_ts.jsonl", [
        event(10, "exec", 7, "sh", ppid=1, argv=["true"], env=[]),
        event(5, "exit", 7, "true", ppid=1),
    ], summary=False)
    return 0


if __name__ == "__main__":
    sys.exit(main())

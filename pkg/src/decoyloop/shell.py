"""Restricted Ubuntu-flavored shell emulation.

Every command resolves against an in-memory table and a read-only fake
filesystem dict — no host filesystem access, no process spawning, no
network. That containment is structural: this module imports nothing
that could reach the host.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

FAKE_PASSWD = """root:x:0:0:root:/root:/bin/bash
daemon:x:1:1:daemon:/usr/sbin:/usr/sbin/nologin
bin:x:2:2:bin:/bin:/usr/sbin/nologin
sys:x:3:3:sys:/dev:/usr/sbin/nologin
sshd:x:110:65534::/run/sshd:/usr/sbin/nologin
ubuntu:x:1000:1000:Ubuntu:/home/ubuntu:/bin/bash
"""

FAKE_PROC_VERSION = (
    "Linux version 5.4.0-104-generic (buildd@lcy02-amd64-002) "
    "(gcc version 9.3.0 (Ubuntu 9.3.0-17ubuntu1~20.04)) "
    "#118-Ubuntu SMP Wed Mar 2 19:02:41 UTC 2022\n"
)

UNAME_FULL = "Linux ubuntu 5.4.0-104-generic #118-Ubuntu SMP Wed Mar 2 19:02:41 UTC 2022 x86_64 x86_64 x86_64 GNU/Linux"

LSCPU_OUTPUT = """Architecture:                    x86_64
CPU op-mode(s):                  32-bit, 64-bit
Byte Order:                      Little Endian
CPU(s):                          2
Vendor ID:                       GenuineIntel
Model name:                      Intel(R) Xeon(R) Platinum 8272CL CPU @ 2.60GHz"""


def default_filesystem() -> dict[str, Optional[str]]:
    """Fake tree: file paths map to contents, directories map to None."""
    return {
        "/": None,
        "/etc": None,
        "/etc/passwd": FAKE_PASSWD,
        "/etc/hostname": "ubuntu\n",
        "/etc/hosts": "127.0.0.1 localhost\n127.0.1.1 ubuntu\n",
        "/proc": None,
        "/proc/version": FAKE_PROC_VERSION,
        "/proc/cpuinfo": "processor\t: 0\nmodel name\t: Intel(R) Xeon(R) Platinum 8272CL CPU @ 2.60GHz\n",
        "/home": None,
        "/home/ubuntu": None,
        "/home/ubuntu/.profile": "# ~/.profile\n",
        "/home/ubuntu/.bashrc": "# ~/.bashrc\n",
        "/root": None,
        "/root/.bashrc": "# ~/.bashrc\n",
        "/tmp": None,
        "/var": None,
        "/var/log": None,
        "/usr": None,
        "/usr/bin": None,
        "/bin": None,
    }


@dataclass
class ShellEmulation:
    """State for one emulated shell: fake fs + command table + identity."""

    hostname: str = "ubuntu"
    username: str = "root"
    cwd: str = "/root"
    files: dict[str, Optional[str]] = field(default_factory=default_filesystem)
    commands: dict[str, Callable[["ShellEmulation", str], str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.commands:
            self.commands = dict(DEFAULT_COMMANDS)

    def prompt(self) -> str:
        mark = "#" if self.username == "root" else "$"
        return f"{self.username}@{self.hostname}:{self.cwd}{mark} "

    def resolve(self, path: str) -> str:
        if not path.startswith("/"):
            path = self.cwd.rstrip("/") + "/" + path
        # normalize without touching the host path machinery
        parts: list[str] = []
        for part in path.split("/"):
            if part in ("", "."):
                continue
            if part == "..":
                if parts:
                    parts.pop()
            else:
                parts.append(part)
        return "/" + "/".join(parts)

    def listdir(self, path: str) -> list[str]:
        base = self.resolve(path)
        prefix = "/" if base == "/" else base + "/"
        children = set()
        for candidate in self.files:
            if candidate != base and candidate.startswith(prefix):
                children.add(candidate[len(prefix):].split("/")[0])
        return sorted(children)


def _not_found(name: str) -> str:
    return f"bash: {name}: command not found"


def _cmd_uname(shell: ShellEmulation, args: str) -> str:
    if "-a" in args.split():
        return UNAME_FULL
    return "Linux"


def _cmd_whoami(shell: ShellEmulation, args: str) -> str:
    return shell.username


def _cmd_id(shell: ShellEmulation, args: str) -> str:
    if shell.username == "root":
        return "uid=0(root) gid=0(root) groups=0(root)"
    return f"uid=1000({shell.username}) gid=1000({shell.username}) groups=1000({shell.username}),27(sudo)"


def _cmd_pwd(shell: ShellEmulation, args: str) -> str:
    return shell.cwd


def _cmd_cd(shell: ShellEmulation, args: str) -> str:
    target = args.split()[0] if args.split() else ("/root" if shell.username == "root" else "/home/ubuntu")
    resolved = shell.resolve(target)
    if resolved in shell.files and shell.files[resolved] is None:
        shell.cwd = resolved
        return ""
    return f"bash: cd: {target}: No such file or directory"


def _cmd_echo(shell: ShellEmulation, args: str) -> str:
    return args


def _cmd_cat(shell: ShellEmulation, args: str) -> str:
    names = args.split()
    if not names:
        return ""
    outputs = []
    for name in names:
        resolved = shell.resolve(name)
        content = shell.files.get(resolved)
        if content is None and resolved in shell.files:
            outputs.append(f"cat: {name}: Is a directory")
        elif content is None:
            outputs.append(f"cat: {name}: No such file or directory")
        else:
            outputs.append(content.rstrip("\n"))
    return "\n".join(outputs)


def _cmd_ls(shell: ShellEmulation, args: str) -> str:
    targets = [a for a in args.split() if not a.startswith("-")]
    target = targets[0] if targets else shell.cwd
    resolved = shell.resolve(target)
    if resolved not in shell.files:
        return f"ls: cannot access '{target}': No such file or directory"
    if shell.files[resolved] is not None:
        return target
    return "  ".join(shell.listdir(resolved))


def _cmd_hostname(shell: ShellEmulation, args: str) -> str:
    return shell.hostname


def _cmd_lscpu(shell: ShellEmulation, args: str) -> str:
    return LSCPU_OUTPUT


def _cmd_w(shell: ShellEmulation, args: str) -> str:
    return (
        " 08:32:01 up 14 days,  3:12,  1 user,  load average: 0.02, 0.05, 0.01\n"
        "USER     TTY      FROM             LOGIN@   IDLE   JCPU   PCPU WHAT\n"
        f"{shell.username:<8} pts/0    10.0.0.5         08:31    0.00s  0.02s  0.00s w"
    )


def _cmd_last(shell: ShellEmulation, args: str) -> str:
    return (
        f"{shell.username:<8} pts/0        10.0.0.5         Thu May 15 08:31   still logged in\n"
        "reboot   system boot  5.4.0-104-generi Thu May  1 05:02   still running\n\n"
        "wtmp begins Thu May  1 05:02:11 2025"
    )


def _cmd_ps(shell: ShellEmulation, args: str) -> str:
    return (
        "  PID TTY          TIME CMD\n"
        "  812 pts/0    00:00:00 bash\n"
        "  977 pts/0    00:00:00 ps"
    )


def _cmd_free(shell: ShellEmulation, args: str) -> str:
    return (
        "              total        used        free      shared  buff/cache   available\n"
        "Mem:        4030348      401220     2833804        1184      795324     3382756\n"
        "Swap:             0           0           0"
    )


def _cmd_df(shell: ShellEmulation, args: str) -> str:
    return (
        "Filesystem     1K-blocks    Used Available Use% Mounted on\n"
        "/dev/root       30297152 4631404  25649364  16% /\n"
        "tmpfs            2015174       0   2015174   0% /dev/shm"
    )


def _cmd_uptime(shell: ShellEmulation, args: str) -> str:
    return " 08:32:01 up 14 days,  3:12,  1 user,  load average: 0.02, 0.05, 0.01"


def _cmd_wget(shell: ShellEmulation, args: str) -> str:
    url = next((a for a in args.split() if not a.startswith("-")), "")
    if not url:
        return "wget: missing URL"
    return (
        f"--2025-05-15 08:32:02--  {url}\n"
        "Resolving host... failed: Temporary failure in name resolution.\n"
        f"wget: unable to resolve host address"
    )


def _cmd_curl(shell: ShellEmulation, args: str) -> str:
    url = next((a for a in args.split() if not a.startswith("-")), "")
    if not url:
        return "curl: try 'curl --help' for more information"
    return f"curl: (6) Could not resolve host: {url.split('/')[2] if '://' in url else url}"


def _cmd_which(shell: ShellEmulation, args: str) -> str:
    name = args.split()[0] if args.split() else ""
    if name in DEFAULT_COMMANDS:
        return f"/usr/bin/{name}"
    return ""


def _cmd_history(shell: ShellEmulation, args: str) -> str:
    return ""


DEFAULT_COMMANDS: dict[str, Callable[[ShellEmulation, str], str]] = {
    "uname": _cmd_uname,
    "whoami": _cmd_whoami,
    "id": _cmd_id,
    "pwd": _cmd_pwd,
    "cd": _cmd_cd,
    "echo": _cmd_echo,
    "cat": _cmd_cat,
    "ls": _cmd_ls,
    "dir": _cmd_ls,
    "hostname": _cmd_hostname,
    "lscpu": _cmd_lscpu,
    "w": _cmd_w,
    "last": _cmd_last,
    "ps": _cmd_ps,
    "free": _cmd_free,
    "df": _cmd_df,
    "uptime": _cmd_uptime,
    "wget": _cmd_wget,
    "curl": _cmd_curl,
    "which": _cmd_which,
    "history": _cmd_history,
}


def emulate_command(line: str, shell: ShellEmulation) -> str:
    """Resolve one raw input line to its emulated output.

    Unknown commands are a normal outcome (`command not found`), never an
    error. Only the first pipeline stage is emulated; anything after a
    shell operator is ignored, matching a minimal restricted shell.
    """
    stripped = line.strip()
    if not stripped:
        return ""
    # take the first simple command of a compound line
    for separator in ("&&", "||", ";", "|"):
        if separator in stripped:
            stripped = stripped.split(separator, 1)[0].strip()
    if not stripped:
        return ""
    parts = stripped.split(None, 1)
    name = parts[0]
    args = parts[1] if len(parts) > 1 else ""
    handler = shell.commands.get(name)
    if handler is None:
        return _not_found(name)
    return handler(shell, args)

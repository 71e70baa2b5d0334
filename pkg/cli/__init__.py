from cli.commands import build_parser, run
from cli.manifest import RunManifest, content_hash

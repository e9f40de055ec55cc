import hashlib
import json
import logging
import os
import sys
from time import gmtime, strftime

import json5

from utils.errors import SchemaError


def mkdir(path):
    """
    Create the directory if missing; returns True when it was created.
    """
    path = path.strip().rstrip('\\')
    if not os.path.exists(path):
        os.makedirs(path)
        return True
    return False


def dumps_line(obj):
    # one canonical encoding so repeated runs write byte-identical files
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_json(data, path):
    with open(path, 'w', encoding='utf8') as f_write:
        json.dump(data, f_write, indent=2, ensure_ascii=False, sort_keys=True)
        f_write.write('\n')


def read_jsonl(path):
    """
    Yields (line_number, object) for every non-blank line; raises SchemaError
    carrying the line number on invalid JSON.
    """
    with open(path, 'r', encoding='utf-8') as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield line_num, json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(line_num, '<json>', f'invalid JSON ({e.msg})') from e


def write_jsonl(rows, path):
    with open(path, 'w', encoding='utf-8') as f:
        for row in rows:
            f.write(dumps_line(row))
            f.write('\n')


def append_jsonl(row, path):
    with open(path, 'a', encoding='utf-8') as f:
        f.write(dumps_line(row))
        f.write('\n')
        f.flush()


def read_txt(path):
    with open(path, 'r', encoding='utf-8') as f:
        return f.read()


def write_txt(text, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)


def file_digest(path):
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            sha.update(chunk)
    return sha.hexdigest()


def create_logger(name=None, silent=False, to_disk=False, log_file=None):
    """Logger wrapper"""
    log = logging.getLogger(name)
    log.setLevel(logging.INFO)
    formatter = logging.Formatter(
        fmt='%(asctime)s %(levelname)s %(message)s', datefmt='%m/%d/%Y %I:%M:%S'
    )
    for handler in list(log.handlers):
        handler.close()
        log.removeHandler(handler)
    if not silent:
        ch = logging.StreamHandler(sys.stderr)
        ch.setLevel(logging.INFO)
        ch.setFormatter(formatter)
        log.addHandler(ch)
    if to_disk:
        log_file = (
            log_file
            if log_file is not None
            else strftime('%Y-%m-%d-%H-%M-%S.log', gmtime())
        )
        fh = logging.FileHandler(log_file, encoding='utf-8')
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(formatter)
        log.addHandler(fh)
    return log


class Config(object):
    """Config load from json5 file
    """

    def __init__(self, config=None, config_file=None):
        if config_file:
            with open(config_file, 'r', encoding='utf-8') as fin:
                config = json5.load(fin)

        self.dict = config or {}
        if config:
            self._update(config)

    def __getitem__(self, key):
        return self.dict[key]

    def __contains__(self, item):
        return item in self.dict

    def get(self, key, default=None):
        return self.dict.get(key, default)

    def items(self):
        return self.dict.items()

    def to_dict(self):
        def _plain(value):
            if isinstance(value, Config):
                return value.to_dict()
            if isinstance(value, list):
                return [_plain(x) for x in value]
            return value
        return {key: _plain(value) for key, value in self.dict.items()}

    def _update(self, config):
        if not isinstance(config, dict):
            return

        for key in config:
            if isinstance(config[key], dict):
                config[key] = Config(config[key])

            if isinstance(config[key], list):
                config[key] = [Config(x) if isinstance(x, dict) else x for x in
                               config[key]]

        self.__dict__.update(config)

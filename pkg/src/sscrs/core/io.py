import json
import os
from typing import Any, Callable, Dict, List, Optional

import yaml
from coed.logging import log
from coed.serialization.vars import AbstractStringReader, add_string_reader

from .errors import DataError, UsageError

CONFIG_READERS = None
""" contains all config readers (.ext -> reader)"""

CONFIG_WRITERS = None
""" contains all config writers (.ext -> writer)"""

RUN_CONFIG_NAME = "run.conf"
""" the configuration that the trainer stores next to its checkpoints """


class File(str):
    """
    Simple class to differentiate files from plain strings.
    """
    pass


class Directory(str):
    """
    Simple class to differentiate directories from plain strings.
    """
    pass


class FileStringReader(AbstractStringReader):
    """
    Turns strings into File objects.
    """

    def handles(self, cls):
        return issubclass(cls, File)

    def convert(self, s: str, base_type=None) -> 'File':
        return File(s)


class DirectoryStringReader(AbstractStringReader):
    """
    Turns strings into Directory objects.
    """

    def handles(self, cls):
        return issubclass(cls, Directory)

    def convert(self, s: str, base_type=None) -> 'Directory':
        return Directory(s)


def fix_extension(ext: str) -> str:
    """
    Ensures that the extension starts with a dot.

    :param ext: the extension to (potentially) fix
    :type ext: str
    :return: the (potentially) fixed extension
    :rtype: str
    """
    if not ext.startswith("."):
        return "." + ext
    else:
        return ext


def get_config_readers() -> Dict:
    global CONFIG_READERS
    if CONFIG_READERS is None:
        CONFIG_READERS = dict()
    return CONFIG_READERS


def get_config_writers() -> Dict:
    global CONFIG_WRITERS
    if CONFIG_WRITERS is None:
        CONFIG_WRITERS = dict()
    return CONFIG_WRITERS


def get_reader_extensions() -> List[str]:
    return sorted(get_config_readers().keys())


def get_writer_extensions() -> List[str]:
    return sorted(get_config_writers().keys())


def add_config_reader(ext: str, reader: Callable):
    """
    Adds a reader for the specified extension.

    :param ext: the extension to add the reader for (incl. dot)
    :type ext: str
    :param reader: the method that turns a path into a RunConfig
    :type reader: callable
    """
    get_config_readers()[fix_extension(ext)] = reader


def add_config_writer(ext: str, writer: Callable):
    """
    Adds a writer for the specified extension.

    :param ext: the extension to add the writer for (incl. dot)
    :type ext: str
    :param writer: the method that saves a RunConfig to a path
    :type writer: callable
    """
    get_config_writers()[fix_extension(ext)] = writer


def get_config_reader(ext: str) -> Optional[Callable]:
    return get_config_readers().get(fix_extension(ext))


def get_config_writer(ext: str) -> Optional[Callable]:
    return get_config_writers().get(fix_extension(ext))


def format_conf_value(value: Any) -> str:
    """
    Turns an option value into its text representation for .conf files.

    :param value: the value
    :return: the text
    :rtype: str
    """
    if isinstance(value, str):
        return str(value)
    return json.dumps(value)


def parse_conf_text(text: str) -> Dict[str, str]:
    """
    Parses 'key = value' lines; blank lines and lines starting with '#' are skipped.

    :param text: the document
    :type text: str
    :return: the dotted keys with their (unparsed) values, in document order
    :rtype: dict
    """
    result = dict()
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if len(line) == 0 or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError("Line %d is not of the form key = value: %s" % (i + 1, line))
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        result[key] = value
    return result


def load_conf_config(path: str):
    """
    Loads a run configuration from the flat key-value (.conf) file.

    :param path: the file to read
    :type path: str
    :return: the configuration
    :rtype: RunConfig
    """
    from .config import RunConfig
    with open(path, "r", encoding="utf-8") as cf:
        return RunConfig().update_flat(parse_conf_text(cf.read()))


def save_conf_config(config, path: str):
    """
    Saves the run configuration as flat key-value (.conf) file.

    :param config: the configuration to save
    :type config: RunConfig
    :param path: the file to write
    :type path: str
    """
    lines = ["%s = %s" % (k, format_conf_value(v)) for k, v in config.to_flat().items()]
    with open(path, "w", encoding="utf-8") as cf:
        cf.write("\n".join(lines) + "\n")


def load_yaml_config(path: str):
    from .config import RunConfig
    with open(path, "r", encoding="utf-8") as yf:
        return RunConfig().update_nested(yaml.safe_load(yf))


def save_yaml_config(config, path: str):
    with open(path, "w", encoding="utf-8") as yf:
        yaml.safe_dump(json.loads(json.dumps(config.to_nested())), yf, sort_keys=False)


def load_json_config(path: str):
    from .config import RunConfig
    with open(path, "r", encoding="utf-8") as jf:
        return RunConfig().update_nested(json.load(jf))


def save_json_config(config, path: str):
    with open(path, "w", encoding="utf-8") as jf:
        json.dump(config.to_nested(), jf, indent=2)


def load_config(path: str):
    """
    Loads the run configuration, using the reader registered for the file's extension.

    :param path: the file to load
    :type path: str
    :return: the configuration
    :rtype: RunConfig
    """
    ext = os.path.splitext(path)[1]
    reader = get_config_reader(ext)
    if reader is None:
        raise UsageError("No config reader for extension '%s' (file: %s), available: %s"
                         % (ext, path, ", ".join(get_reader_extensions())))
    if not os.path.isfile(path):
        raise DataError("Config file does not exist: %s" % path)
    log("Loading config: %s" % path)
    return reader(path)


def save_config(config, path: str):
    """
    Saves the run configuration, using the writer registered for the file's extension.

    :param config: the configuration to save
    :type config: RunConfig
    :param path: the file to write
    :type path: str
    """
    ext = os.path.splitext(path)[1]
    writer = get_config_writer(ext)
    if writer is None:
        raise UsageError("No config writer for extension '%s' (file: %s), available: %s"
                         % (ext, path, ", ".join(get_writer_extensions())))
    writer(config, path)


# flat key-value
add_config_reader(".conf", load_conf_config)
add_config_writer(".conf", save_conf_config)

# YAML
add_config_reader(".yaml", load_yaml_config)
add_config_writer(".yaml", save_yaml_config)

# JSON
add_config_reader(".json", load_json_config)
add_config_writer(".json", save_json_config)

# serialization
add_string_reader(FileStringReader)
add_string_reader(DirectoryStringReader)

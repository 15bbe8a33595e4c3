from typing import List, Union

from .errors import DataError

Number = Union[int, float]

METRIC_IOU = "iou"
METRIC_MIOU = "miou"
METRIC_PRECISION = "precision"
METRIC_RECALL = "recall"
METRIC_NUM_SCENES = "num_scenes"
METRIC_WALL_TIME = "wall_time"

PREFIX_CLASS_IOU = "iou."
PREFIX_PARAMS = "params."


class MetricsReport:
    """
    Flat map of metric name -> value, serialized as sorted 'name = value' lines.
    """

    def __init__(self):
        """
        Initializes the report.
        """
        self._values = dict()
        self._additional_names = list()

    def names(self) -> List[str]:
        return [METRIC_IOU, METRIC_MIOU, METRIC_PRECISION, METRIC_RECALL, METRIC_NUM_SCENES, METRIC_WALL_TIME]

    def stored(self) -> List[str]:
        """
        Returns the names of the values currently stored.

        :return: the sorted names
        :rtype: list
        """
        result = list(self._values.keys())
        result.sort()
        return result

    def _is_valid_name(self, name: str) -> bool:
        if name in self._additional_names:
            return True
        if name in self.names():
            return True
        return name.startswith(PREFIX_CLASS_IOU) or name.startswith(PREFIX_PARAMS)

    def has(self, name: str) -> bool:
        return name in self._values

    def get(self, name: str):
        """
        Returns the value stored under the specified name.

        :param name: the name of the value to retrieve
        :type name: str
        :return: the value, None if not stored
        """
        return self._values.get(name)

    def set(self, name: str, value: Number) -> bool:
        """
        Sets the value under the specified name (if valid name).

        :param name: the name to store the value under
        :type name: str
        :param value: the value to store
        :return: if successfully stored
        :rtype: bool
        """
        if value is None:
            return False
        if self._is_valid_name(name):
            self._values[name] = value
            return True
        else:
            return False

    def add_additional_name(self, name: str):
        if name not in self._additional_names:
            self._additional_names.append(name)

    def to_text(self) -> str:
        """
        Serializes the stored values, one 'name = value' per line in name order.

        :return: the document
        :rtype: str
        """
        lines = []
        for name in self.stored():
            value = self.get(name)
            if isinstance(value, bool) or isinstance(value, int):
                lines.append("%s = %d" % (name, int(value)))
            else:
                lines.append("%s = %.8f" % (name, float(value)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> 'MetricsReport':
        """
        Parses a document generated by to_text.

        :param text: the document
        :type text: str
        :return: the report
        :rtype: MetricsReport
        """
        result = cls()
        for i, line in enumerate(text.splitlines()):
            line = line.strip()
            if len(line) == 0:
                continue
            if " = " not in line:
                raise DataError("Malformed metrics line %d: %s" % (i + 1, line))
            name, value = line.split(" = ", 1)
            result.add_additional_name(name)
            result.set(name, float(value) if "." in value else int(value))
        return result

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path: str) -> 'MetricsReport':
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_text(f.read())

    def __str__(self):
        """
        Returns a short string representation of the report.

        :return: the string representation
        :rtype: str
        """
        return ", ".join(name + "=" + str(self.get(name)) for name in self.stored())

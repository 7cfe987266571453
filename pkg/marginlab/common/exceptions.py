#    Copyright 2025 Genesis Corporation.
#
#    All Rights Reserved.
#
#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.
import typing as tp


class MarginLabException(Exception):
    message = "An unknown exception occurred."

    def __init__(self, **kwargs: tp.Any):
        self.kwargs = kwargs
        self.msg = self.message % kwargs
        super(MarginLabException, self).__init__(self.msg)

    def __repr__(self) -> str:
        return "%s: %s" % (type(self), self.msg)


class MalformedDocument(MarginLabException):
    message = "Malformed document %(source)s, field %(field)s: %(reason)s"

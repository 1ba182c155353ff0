namespace mapmerge {}
